import csv

import pytest

from sectionlab.experiments import RunStatus, run_experiment
from sectionlab.experiments.reports import read_summary
from sectionlab.utils.errors import ConfigError


@pytest.mark.slow
def test_minimal_measure_run(minimal_config, temp_dir):
    out = temp_dir / "run"
    outcome = run_experiment(minimal_config, out_dir=out)
    assert outcome.status is RunStatus.PASS
    assert outcome.exit_code == 0

    summary = read_summary(out / "summary.json")
    assert summary["schema_version"] == 1
    assert summary["status"] == "pass"
    for key in ("experiment", "seed", "checks", "hypotheses", "norm_budgets", "constants", "tables"):
        assert key in summary
    assert summary["constants"]["M1"]["provenance"].startswith("calibrated")
    for name in summary["tables"]:
        assert (out / name).exists()


@pytest.mark.slow
def test_fixed_seed_reproduces_tables(minimal_config, temp_dir):
    first, second = temp_dir / "first", temp_dir / "second"
    run_experiment(minimal_config, out_dir=first)
    run_experiment(minimal_config, out_dir=second)
    tables = sorted(p.name for p in first.glob("*.csv"))
    assert tables
    for name in tables:
        assert (first / name).read_bytes() == (second / name).read_bytes()


HARNACK_CONFIG = """\
seed = 3

[grid]
dim = 2
resolution = 64
half_width = 1.5

[potential]
family = "quadratic"

[experiment]
name = "harnack"
solution_family = "potential-composed"
coefficient_mode = "isotropic"
t0 = 0.2
eccentricities = [1.0, 4.0, 16.0]
"""


@pytest.mark.slow
def test_harnack_families_share_one_constant(temp_dir):
    path = temp_dir / "harnack.toml"
    path.write_text(HARNACK_CONFIG)
    out = temp_dir / "harnack"
    outcome = run_experiment(path, out_dir=out)

    checks = {c.name.split(": ", 1)[-1]: c.passed for c in outcome.checks}
    for label in ("quadratic", "eccentric s=1", "eccentric s=4", "eccentric s=16"):
        assert checks[f"Harnack quotient ({label})"] is True
    assert checks["Harnack constant across eccentricity"] is True

    with open(out / "harnack_families.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["family"] for r in rows] == ["quadratic", "eccentric", "eccentric", "eccentric"]
    for row in rows:
        assert int(float(row["calibration"])) == 25
        assert int(float(row["test"])) == 50


def test_missing_resolution(temp_dir):
    path = temp_dir / "config.toml"
    path.write_text('[grid]\ndim = 2\n\n[potential]\nfamily = "quadratic"\n\n[experiment]\nname = "measure"\n')
    with pytest.raises(ConfigError) as excinfo:
        run_experiment(path)
    assert excinfo.value.field == "grid.resolution"
