import pytest
from click.testing import CliRunner

from sectionlab.cli import cli
from sectionlab.utils.errors import ConfigError


@pytest.fixture
def cli_runner():
    return CliRunner()


class TestExperimentCommands:
    def test_exit_code_follows_outcome(self, cli_runner, minimal_config, mocker):
        run = mocker.patch("sectionlab.cli.run_experiment", return_value=mocker.Mock(exit_code=3))
        result = cli_runner.invoke(cli, ["measure", "--config", str(minimal_config)])
        assert result.exit_code == 3
        run.assert_called_once_with(
            minimal_config, {"experiment.name": "measure", "seed": None, "grid.resolution": None}, None
        )

    def test_overrides(self, cli_runner, minimal_config, temp_dir, mocker):
        run = mocker.patch("sectionlab.cli.run_experiment", return_value=mocker.Mock(exit_code=0))
        out = temp_dir / "elsewhere"
        result = cli_runner.invoke(
            cli, ["cover", "--config", str(minimal_config), "--seed", "5", "--grid", "32", "--out", str(out)]
        )
        assert result.exit_code == 0
        run.assert_called_once_with(
            minimal_config, {"experiment.name": "cover", "seed": 5, "grid.resolution": 32}, out
        )

    def test_config_error(self, cli_runner, minimal_config, mocker):
        mocker.patch(
            "sectionlab.cli.run_experiment", side_effect=ConfigError("grid.resolution", "Field required")
        )
        result = cli_runner.invoke(cli, ["sections", "--config", str(minimal_config)])
        assert result.exit_code == 2
        assert "Config error in grid.resolution" in result.output

    def test_config_is_required(self, cli_runner):
        result = cli_runner.invoke(cli, ["harnack"])
        assert result.exit_code == 2

    def test_every_experiment_has_a_command(self):
        for name in ("sections", "normalize", "slide", "measure", "doubling", "decay", "harnack", "cover", "all"):
            assert name in cli.commands


class TestValidateCommand:
    def test_valid(self, cli_runner, minimal_config):
        result = cli_runner.invoke(cli, ["validate", "--config", str(minimal_config)])
        assert result.exit_code == 0
        assert "VALIDATION SUMMARY" in result.output

    def test_invalid(self, cli_runner, temp_dir):
        path = temp_dir / "broken.toml"
        path.write_text("[grid]\nresolution = 33\n")
        result = cli_runner.invoke(cli, ["validate", "--config", str(path)])
        assert result.exit_code == 1
