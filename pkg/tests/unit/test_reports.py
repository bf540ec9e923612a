import numpy as np

from sectionlab.experiments.reports import (
    SCHEMA_VERSION,
    format_cell,
    read_summary,
    write_plot,
    write_summary,
    write_table,
)


class TestFormatting:
    def test_cells(self):
        assert format_cell(True) == "true"
        assert format_cell(0.1) == "0.1"
        assert format_cell(None) == ""
        assert format_cell(3) == "3"


class TestFiles:
    def test_table_header_is_union_in_first_seen_order(self, temp_dir):
        path = write_table(temp_dir / "t.csv", [{"a": 1.5, "b": True}, {"c": "x", "a": 2.0}])
        assert path.read_text() == "a,b,c\n1.5,true,\n2.0,,x\n"

    def test_plot(self, temp_dir):
        path = write_plot(temp_dir / "sub" / "p.dat", [(0, 1.25), (0.5, 2)])
        assert path.read_text() == "x,y\n0.0,1.25\n0.5,2.0\n"

    def test_summary(self, temp_dir):
        path = write_summary(
            temp_dir / "summary.json",
            {"value": np.float64(0.5), "ratio": float("inf"), "rows": (1, 2), "path": temp_dir},
        )
        data = read_summary(path)
        assert data["schema_version"] == SCHEMA_VERSION == 1
        assert data["value"] == 0.5
        assert data["ratio"] == "inf"
        assert data["rows"] == [1, 2]
        assert data["path"] == str(temp_dir)
