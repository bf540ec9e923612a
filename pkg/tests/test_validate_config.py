import shutil
import sys
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from sectionlab.validation import ConfigValidator, main

CONFIG = """\
seed = 1

[grid]
resolution = {resolution}

[potential]
family = "cosine"
params = {{ eta = {eta}, omega = 1.5 }}

[experiment]
name = "sections"
t0 = {t0}

[output]
directory = "{out}"
"""


class TestConfigValidator(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.config_path = Path(self.test_dir) / "config.toml"

    def tearDown(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def write_config(self, resolution=64, eta=0.3, t0=0.2):
        out = (Path(self.test_dir) / "runs").as_posix()
        self.config_path.write_text(CONFIG.format(resolution=resolution, eta=eta, t0=t0, out=out))
        return ConfigValidator(self.config_path)

    def test_valid_config(self):
        validator = self.write_config()
        self.assertTrue(validator.validate())
        self.assertEqual(validator.checks_passed, 6)
        self.assertEqual(validator.issues, [])

    def test_missing_file(self):
        validator = ConfigValidator(Path(self.test_dir) / "absent.toml")
        self.assertFalse(validator.validate())
        self.assertTrue(any(issue.startswith("Config File") for issue in validator.issues))

    def test_parameter_out_of_range(self):
        validator = self.write_config(eta=1.5)
        self.assertFalse(validator.validate())
        self.assertTrue(any("Bad cosine parameters" in issue for issue in validator.issues))

    def test_section_reaches_collar(self):
        validator = self.write_config(t0=0.5)
        validator.validate()
        self.assertFalse(validator.check_grid_feasible())

    def test_coarse_grid_warns(self):
        validator = self.write_config(resolution=16, t0=0.1)
        self.assertTrue(validator.validate())
        self.assertTrue(any("coarse" in warning for warning in validator.warnings))

    def test_pinching_certificate_warning(self):
        validator = self.write_config()
        validator.validate()
        self.assertTrue(any("pinching certificate" in warning for warning in validator.warnings))

    def test_entry_point_exit_code(self):
        self.write_config()
        with mock.patch.object(sys, "argv", ["sectionlab-validate", str(self.config_path)]):
            with self.assertRaises(SystemExit) as exit_info:
                main()
        self.assertEqual(exit_info.exception.code, 0)

    def test_script_wraps_package_validator(self):
        import scripts.validate_config as wrapper

        self.assertIs(wrapper.ConfigValidator, ConfigValidator)
        self.assertIs(wrapper.main, main)


if __name__ == '__main__':
    unittest.main()
