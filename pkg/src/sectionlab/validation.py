"""Named pre-flight checks on an experiment configuration.

``sectionlab validate`` and the ``sectionlab-validate`` script both run
:class:`ConfigValidator`.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path
from typing import Any

from rich.console import Console

from .core.grid import Grid
from .core.potentials import make_potential
from .core.sections import section
from .experiments.config import (
    PARAM_RANGES,
    ExperimentConfig,
    read_document,
    validate_document,
)
from .utils.errors import SectionLabError

console = Console(highlight=False)


class ConfigValidator:
    def __init__(self, config_path: Path):
        self.config_path = Path(config_path)
        self.raw: dict[str, Any] | None = None
        self.config: ExperimentConfig | None = None
        self.issues: list[str] = []
        self.warnings: list[str] = []
        self.checks_passed = 0
        self.checks_failed = 0

    def validate(self) -> bool:
        """Run all validation checks"""
        console.print(f"🔍 Validating {self.config_path}...\n")

        checks = [
            ("Config File", self.check_parses),
            ("Schema", self.check_schema),
            ("Family Parameters", self.check_family_params),
            ("Constant Ordering", self.check_constant_ordering),
            ("Grid Feasibility", self.check_grid_feasible),
            ("Output Directory", self.check_output_writable),
        ]

        for check_name, check_func in checks:
            console.print(f"Checking {check_name}...")
            try:
                result = check_func()
                if result:
                    console.print(f"  ✅ {check_name} - OK")
                    self.checks_passed += 1
                else:
                    console.print(f"  ❌ {check_name} - FAILED")
                    self.checks_failed += 1
            except (SectionLabError, TypeError, ValueError) as e:
                console.print(f"  ❌ {check_name} - ERROR: {e}")
                self.checks_failed += 1
                self.issues.append(f"{check_name}: {e}")

        self.display_summary()

        return self.checks_failed == 0

    def check_parses(self) -> bool:
        """Check the file exists and reads as TOML or JSON"""
        self.raw = read_document(self.config_path)
        return True

    def check_schema(self) -> bool:
        """Check the document against the pydantic models"""
        if self.raw is None:
            self.issues.append("Schema: nothing to validate")
            return False
        self.config = validate_document(self.raw)
        return True

    def check_family_params(self) -> bool:
        """Check every potential parameter is known and in range"""
        raw = (self.raw or {}).get("potential", {})
        family = raw.get("family")
        if family not in PARAM_RANGES:
            self.issues.append(f"Unknown potential family: {family}")
            return False
        ranges = PARAM_RANGES[family]
        bad = []
        for name, value in raw.get("params", {}).items():
            if name not in ranges:
                bad.append(f"{name} (unknown)")
            elif not ranges[name][0] <= value <= ranges[name][1]:
                bad.append(f"{name}={value} outside {list(ranges[name])}")
        if bad:
            self.issues.append(f"Bad {family} parameters: {', '.join(bad)}")
        return not bad

    def check_constant_ordering(self) -> bool:
        """Check lam <= Lam, lam_tilde <= Lam_tilde and p > n"""
        if self.config is None:
            self.issues.append("Constant Ordering: schema did not validate")
            return False
        c = self.config.constants
        problems = []
        if c.lam is not None and c.Lam is not None and c.lam > c.Lam:
            problems.append(f"lam={c.lam} > Lam={c.Lam}")
        if c.lam_tilde > c.Lam_tilde:
            problems.append(f"lam_tilde={c.lam_tilde} > Lam_tilde={c.Lam_tilde}")
        if c.p <= self.config.grid.dim:
            problems.append(f"p={c.p} <= n={self.config.grid.dim}")
        if c.lam is None or c.Lam is None:
            self.warnings.append("lam/Lam unset: the potential's pinching certificate is used")
        self.issues.extend(problems)
        return not problems

    def check_grid_feasible(self) -> bool:
        """Check S(0, 4 t0) stays clear of the grid collar"""
        if self.config is None:
            self.issues.append("Grid Feasibility: schema did not validate")
            return False
        g, e, p = self.config.grid, self.config.experiment, self.config.potential
        grid = Grid.box(g.dim, g.half_width, g.resolution)
        u = make_potential(p.family, grid, p.sampled, **p.params)
        origin = [0.0] * g.dim
        outer = section(u, origin, 4 * e.t0)
        if not outer.compactly_contained:
            self.issues.append(f"S(0, 4 t0) with t0={e.t0} reaches the grid collar; lower t0 or widen the box")
            return False
        loose = [h for h in e.heights if not section(u, origin, h).compactly_contained]
        if loose:
            self.warnings.append(f"Heights reaching the collar are skipped: {loose}")
        if g.resolution < 32:
            self.warnings.append(f"resolution {g.resolution} is coarse; small sections may hold few nodes")
        return True

    def check_output_writable(self) -> bool:
        """Check the output directory (or its nearest existing parent) is writable"""
        directory = self.config.output.directory if self.config else Path("runs")
        existing = directory.resolve()
        while not existing.exists():
            existing = existing.parent
        if not os.access(existing, os.W_OK):
            self.issues.append(f"Output directory not writable: {existing}")
            return False
        return True

    def display_summary(self):
        """Display validation summary"""
        console.print("\n" + "=" * 60)
        console.print("VALIDATION SUMMARY")
        console.print("=" * 60)

        total_checks = self.checks_passed + self.checks_failed
        success_rate = (self.checks_passed / total_checks * 100) if total_checks > 0 else 0

        console.print(f"\nChecks Passed: {self.checks_passed}/{total_checks} ({success_rate:.0f}%)")

        if self.issues:
            console.print(f"\n❌ Critical Issues ({len(self.issues)}):")
            for issue in self.issues:
                console.print(f"  • {issue}")

        if self.warnings:
            console.print(f"\n⚠️  Warnings ({len(self.warnings)}):")
            for warning in self.warnings:
                console.print(f"  • {warning}")

        if self.checks_failed == 0:
            console.print("\n✅ Configuration is valid!")
        else:
            console.print("\n❌ Configuration has issues that need to be fixed.")

        console.print("=" * 60)


def main() -> None:
    """Entry point of ``sectionlab-validate``."""
    import argparse

    parser = argparse.ArgumentParser(description="Validate a sectionlab experiment configuration")
    parser.add_argument("config", type=Path, help="Configuration file (.toml or .json)")

    args = parser.parse_args()

    validator = ConfigValidator(args.config)
    sys.exit(0 if validator.validate() else 1)
