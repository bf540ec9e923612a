"""Experiment runner: shared context, check bookkeeping and report writing."""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
from rich.console import Console

from ..core.grid import Grid, inner_boundary
from ..core.normalization import ProblemInstance
from ..core.potentials import Potential, StructuralConstants, make_potential
from ..core.sections import (
    GeometryConstants,
    SectionSet,
    calibrate_inclusion_coefficient,
    estimate_c1alpha,
    estimate_engulfing,
    estimate_k_hat,
    estimate_size_exponent,
    require_compact,
    section,
)
from ..utils.errors import (
    HeightBudgetExceeded,
    HypothesisViolation,
    NormBudgetExceeded,
    SectionLabError,
)
from ..utils.logging import get_logger
from .config import ExperimentConfig, load_config
from .estimates import RunStatus
from .reports import write_plot, write_summary, write_table
from .solutions import SolutionSample, generate_solutions

logger = get_logger(__name__)

console = Console(highlight=False)

T = TypeVar("T")

GATED_ERRORS = (HypothesisViolation, NormBudgetExceeded, HeightBudgetExceeded)
EXPERIMENT_ORDER = ("sections", "normalize", "slide", "measure", "doubling", "decay", "harnack", "cover")
EXIT_CODES = {RunStatus.PASS: 0, RunStatus.FAIL: 1, RunStatus.NOT_APPLICABLE: 3}


def spread(points: np.ndarray, count: int) -> np.ndarray:
    """``count`` evenly strided rows of ``points`` (all of them if fewer)."""
    if points.shape[0] <= count:
        return points
    return points[np.linspace(0, points.shape[0] - 1, count).astype(int)]


class ExperimentContext:
    """Grid, potential and problem instance shared by the experiments of one run.

    The reference frame is x0 = 0 with S_4 = S(x0, 4 t0) as the section of
    the problem instance.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        g, c, e = config.grid, config.constants, config.experiment
        self.grid = Grid.box(g.dim, g.half_width, g.resolution)
        self.potential = self.build_potential(self.grid)
        self.x0 = np.zeros(g.dim)
        self.t0 = e.t0
        self.S4 = require_compact(section(self.potential, self.x0, 4 * self.t0))
        self.constants: dict[str, dict[str, Any]] = {}
        self._provenance = c.provenance()

        lam = self.setting("lam") if c.lam is not None else self.record("lam", self.potential.pinching[0], "certificate")
        Lam = self.setting("Lam") if c.Lam is not None else self.record("Lam", self.potential.pinching[1], "certificate")
        self.structural = StructuralConstants(lam, Lam, c.lam_tilde, c.Lam_tilde, c.p)
        self.P = self.build_instance(self.potential, self.S4)
        self._geometry: GeometryConstants | None = None

    def build_potential(self, grid: Grid) -> Potential:
        pc = self.config.potential
        return make_potential(pc.family, grid, pc.sampled, **pc.params)

    def build_instance(self, u: Potential, sec: SectionSet) -> ProblemInstance:
        c, e = self.config.constants, self.config.experiment
        return ProblemInstance.linearized(
            u,
            sec,
            c.lam_tilde,
            c.Lam_tilde,
            mode=e.coefficient_mode,
            drift=e.drift,
            zero_order=e.zero_order,
            p=c.p,
        )

    # -- constants ----------------------------------------------------------

    def record(self, name: str, value: Any, provenance: str) -> Any:
        if isinstance(value, float) and not math.isfinite(value):
            value = repr(value)
        self.constants[name] = {"value": value, "provenance": provenance}
        return value

    def setting(self, name: str) -> Any:
        """A constant from the config section, recorded with its provenance."""
        value = getattr(self.config.constants, name)
        self.constants[name] = {"value": value, "provenance": self._provenance[name]}
        return value

    def calibrated(self, name: str, batch: str, compute: Callable[[], float]) -> float:
        """The configured value when set, otherwise ``compute()`` tagged with its batch."""
        if getattr(self.config.constants, name) is not None:
            return self.setting(name)
        return self.record(name, float(compute()), f"calibrated:{batch}")

    # -- samples ------------------------------------------------------------

    def samples(
        self, batch: str, P: ProblemInstance | None = None, count: int | None = None, stream: int = 0
    ) -> list[SolutionSample]:
        """Calibration and test batches come from disjoint seeds.

        ``stream`` shifts both seeds by 2 * stream, so separate streams never share one.
        """
        e = self.config.experiment
        if count is None:
            count = e.calibration if batch == "calibration" else e.samples
        seed = self.config.seed + 2 * stream + (0 if batch == "calibration" else 1)
        return generate_solutions(P or self.P, e.solution_family, count, seed)

    def map(self, func: Callable[[Any], T], items: Iterable[Any]) -> list[T]:
        """Apply ``func`` over a worker pool; results keep submission order."""
        items = list(items)
        workers = self.config.experiment.workers
        if workers <= 1 or len(items) < 2:
            return [func(item) for item in items]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, items))

    # -- geometry -----------------------------------------------------------

    def geometry(self) -> GeometryConstants:
        """Engulfing, size, inclusion, Hoelder and dilation constants, calibrated once."""
        if self._geometry is not None:
            return self._geometry
        u, x0, t0, n = self.potential, self.x0, self.t0, self.grid.dim
        half = section(u, x0, t0 / 2)
        engulf = estimate_engulfing(u, [(x, t0 / 4) for x in spread(half.points, 6)])
        size = estimate_size_exponent(
            u, self.S4, samples=spread(half.points, 8), heights=list(np.geomspace(t0 / 16, t0 / 2, 5))
        )
        rng = np.random.default_rng(self.config.seed)
        pool = section(u, x0, 2 * t0).points
        picks = rng.integers(0, pool.shape[0], size=(600, 2))
        holder = estimate_c1alpha(u, self.S4, pairs=[(pool[i], pool[j]) for i, j in picks if i != j])

        r, s = 0.25, 0.5
        p1 = (n + 1) / size.mu_hat
        ring = inclusion_points(u, x0, r * t0)
        c0 = calibrate_inclusion_coefficient(u, x0, t0, r, s, spread(ring[0::2], 8), p1)
        K_hat = estimate_k_hat(u, x0, t0, [(x, t0 / 8) for x in spread(section(u, x0, t0 / 4).points, 8)])

        geometry = GeometryConstants.from_estimates(
            n,
            theta0=engulf.theta0_hat,
            mu=size.mu_hat,
            c0=c0,
            K_hat=K_hat,
            alpha_star=holder.alpha_star,
            provenance={"all": "calibrated:geometry"},
        )
        for name in ("theta0", "mu", "p1", "c0", "K", "K_hat", "alpha_star"):
            self.record(name, float(getattr(geometry, name)), "calibrated:geometry")
        self._geometry = geometry
        return geometry


def inclusion_points(u: Potential, x0: np.ndarray, height: float) -> np.ndarray:
    """Outermost member nodes of S(x0, height), in C order."""
    sec = section(u, x0, height)
    return u.grid.points[inner_boundary(sec.cells)]


@dataclass
class CheckResult:
    name: str
    passed: bool | None
    detail: str = ""

    def as_dict(self) -> dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass
class ExperimentOutcome:
    experiment: str
    seed: int
    checks: list[CheckResult] = field(default_factory=list)
    hypotheses: dict[str, bool] = field(default_factory=dict)
    norm_budgets: dict[str, dict[str, Any]] = field(default_factory=dict)
    constants: dict[str, dict[str, Any]] = field(default_factory=dict)
    tables: dict[str, list[dict[str, Any]]] = field(default_factory=dict)
    plots: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    files: list[str] = field(default_factory=list)

    @property
    def status(self) -> RunStatus:
        """Any failed check fails the run; a run that asserted nothing is not applicable."""
        if any(c.passed is False for c in self.checks):
            return RunStatus.FAIL
        if any(c.passed for c in self.checks):
            return RunStatus.PASS
        return RunStatus.NOT_APPLICABLE

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]

    def summary(self) -> dict[str, Any]:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "status": str(self.status),
            "exit_code": self.exit_code,
            "checks": [c.as_dict() for c in self.checks],
            "hypotheses": self.hypotheses,
            "norm_budgets": self.norm_budgets,
            "constants": self.constants,
            "tables": self.files,
        }


class ExperimentRunner:
    """Runs the experiments a config names and reports every check as it goes."""

    def __init__(self, config: ExperimentConfig, out_dir: Path | None = None):
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else config.output.directory
        self.outcome = ExperimentOutcome(config.experiment.name, config.seed)
        self.issues: list[str] = []
        self.warnings: list[str] = []
        self.checks_passed = 0
        self.checks_failed = 0
        self.current = ""
        self._context: ExperimentContext | None = None

    @property
    def context(self) -> ExperimentContext:
        if self._context is None:
            self._context = ExperimentContext(self.config)
        return self._context

    def run(self) -> ExperimentOutcome:
        """Run all requested experiments, print the summary and write the reports."""
        from .suites import SUITES

        name = self.config.experiment.name
        names = EXPERIMENT_ORDER if name == "all" else (name,)
        console.print(f"🔍 Running {name} (seed {self.config.seed})...\n")
        for experiment in names:
            self.current = experiment
            console.print(f"Running {experiment}...")
            try:
                SUITES[experiment](self.context, self)
            except GATED_ERRORS as e:
                self.skip("run", str(e))
            except SectionLabError as e:
                logger.error("%s failed: %s", experiment, e, extra={"details": e.details()})
                self.check("run", False, f"ERROR: {e}")

        self.outcome.constants = dict(self._context.constants) if self._context else {}
        self.display_summary()
        self.write_reports()
        return self.outcome

    # -- recording ----------------------------------------------------------

    def _label(self, name: str) -> str:
        return f"{self.current}: {name}" if self.current else name

    def check(self, name: str, passed: bool, detail: str = "") -> bool:
        label = self._label(name)
        passed = bool(passed)
        if passed:
            console.print(f"  ✅ {label} - OK" + (f" ({detail})" if detail else ""))
            self.checks_passed += 1
        else:
            console.print(f"  ❌ {label} - FAILED" + (f": {detail}" if detail else ""))
            self.checks_failed += 1
            self.issues.append(f"{label}: {detail}" if detail else label)
        self.outcome.checks.append(CheckResult(label, passed, detail))
        return passed

    def skip(self, name: str, reason: str) -> None:
        """A check whose hypothesis does not hold: recorded, never asserted."""
        label = self._label(name)
        logger.warning("%s not applicable: %s", label, reason)
        console.print(f"  ⚠️  {label} - NOT APPLICABLE: {reason}")
        self.warnings.append(f"{label}: {reason}")
        self.outcome.checks.append(CheckResult(label, None, reason))
        self.outcome.hypotheses[label] = False

    def hypothesis(self, name: str, holds: bool) -> bool:
        self.outcome.hypotheses[self._label(name)] = bool(holds)
        return bool(holds)

    def budget(self, name: str, measured: float, budget: float | None) -> None:
        self.outcome.norm_budgets[self._label(name)] = {
            "measured": measured,
            "budget": budget,
            "enforced": budget is not None,
        }

    def gated(self, name: str, func: Callable[[], T]) -> T | None:
        """``func()``, or None with a skip when one of its hypotheses fails."""
        try:
            return func()
        except GATED_ERRORS as e:
            self.skip(name, str(e))
            return None

    def table(self, name: str, rows: Sequence[dict[str, Any]]) -> None:
        self.outcome.tables[f"{self.current}_{name}"] = list(rows)

    def plot(self, name: str, points: Iterable[tuple[float, float]]) -> None:
        self.outcome.plots[f"{self.current}_{name}"] = [(float(x), float(y)) for x, y in points]

    # -- output -------------------------------------------------------------

    def write_reports(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        files = []
        for name, rows in self.outcome.tables.items():
            files.append(write_table(self.out_dir / f"{name}.csv", rows).name)
        for name, points in self.outcome.plots.items():
            files.append(write_plot(self.out_dir / f"{name}.dat", points).name)
        self.outcome.files = files
        write_summary(self.out_dir / "summary.json", self.outcome.summary())
        logger.info("reports written to %s", self.out_dir)

    def display_summary(self) -> None:
        total = self.checks_passed + self.checks_failed
        rate = (self.checks_passed / total * 100) if total else 0.0
        console.print("\n" + "=" * 60)
        console.print("SUMMARY")
        console.print("=" * 60)
        console.print(f"\nChecks Passed: {self.checks_passed}/{total} ({rate:.0f}%)")

        if self.issues:
            console.print(f"\n❌ Failed Checks ({len(self.issues)}):")
            for issue in self.issues:
                console.print(f"  • {issue}")

        if self.warnings:
            console.print(f"\n⚠️  Not Applicable ({len(self.warnings)}):")
            for warning in self.warnings:
                console.print(f"  • {warning}")

        status = self.outcome.status
        if status is RunStatus.PASS:
            console.print("\n✅ All asserted checks passed!")
        elif status is RunStatus.FAIL:
            console.print("\n❌ Some checks failed.")
        else:
            console.print("\n⚠️  No check was applicable.")
        console.print("=" * 60)


def run_experiment(
    config_path: Path | str,
    overrides: dict[str, Any] | None = None,
    out_dir: Path | None = None,
) -> ExperimentOutcome:
    """Load a config, run its experiment and write the reports.

    Raises:
        ConfigError: the config does not parse or validate.
    """
    config = load_config(config_path, overrides)
    return ExperimentRunner(config, out_dir).run()
