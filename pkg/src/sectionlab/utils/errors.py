"""Exception hierarchy shared by every sectionlab module.

Errors carry the structured values a report needs (which claim failed, by
how much, which cell witnessed it) as attributes, so the experiment runner
can serialize them without parsing messages.
"""

from __future__ import annotations

from typing import Any


class SectionLabError(Exception):
    """Base class for all sectionlab errors."""

    def details(self) -> dict[str, Any]:
        return {"error": type(self).__name__, "message": str(self)}


# geometry ---------------------------------------------------------------


class OutOfDomain(SectionLabError):
    def __init__(self, point: Any) -> None:
        super().__init__(f"point {point!r} lies outside the grid")
        self.point = point


class SingularHessian(SectionLabError):
    def __init__(self, min_det: float, floor: float) -> None:
        super().__init__(f"det D2u = {min_det:.3e} below floor {floor:.3e}")
        self.min_det = min_det
        self.floor = floor


class NotSymmetric(SectionLabError):
    pass


class NotPSD(SectionLabError):
    pass


class EmptyBoundary(SectionLabError):
    pass


class NonzeroBoundary(SectionLabError):
    def __init__(self, max_abs: float, tolerance: float) -> None:
        super().__init__(
            f"max |u| on boundary cells is {max_abs:.3e} > tolerance {tolerance:.3e}"
        )
        self.max_abs = max_abs
        self.tolerance = tolerance


class NotCompactlyContained(SectionLabError):
    def __init__(self, center: Any, height: float) -> None:
        super().__init__(
            f"section at {center!r} with height {height:g} touches the grid collar"
        )
        self.center = center
        self.height = height


class FitDegenerate(SectionLabError):
    def __init__(self, usable: int, required: int) -> None:
        super().__init__(f"only {usable} usable fit points, need {required}")
        self.usable = usable
        self.required = required


class PreconditionViolation(SectionLabError):
    pass


class DegenerateSection(SectionLabError):
    pass


class SingularMap(SectionLabError):
    pass


# sliding ----------------------------------------------------------------


class EmptyDomain(SectionLabError):
    pass


class NonFiniteField(SectionLabError):
    pass


class ContainmentFailure(SectionLabError):
    def __init__(self, opening: float, boundary_count: int) -> None:
        super().__init__(
            f"opening a={opening:g} leaves {boundary_count} contacts on the boundary"
        )
        self.opening = opening
        self.boundary_count = boundary_count

    def details(self) -> dict[str, Any]:
        return {
            **super().details(),
            "opening": self.opening,
            "boundary_count": self.boundary_count,
        }


class ClaimViolation(SectionLabError):
    def __init__(self, claim: str, margin: float) -> None:
        super().__init__(f"claim '{claim}' violated by {margin:.3e}")
        self.claim = claim
        self.margin = margin

    def details(self) -> dict[str, Any]:
        return {**super().details(), "claim": self.claim, "margin": self.margin}


# barriers / covering ----------------------------------------------------


class NoConvergence(SectionLabError):
    def __init__(self, iterations: int, residual: float) -> None:
        super().__init__(
            f"no convergence after {iterations} iterations (residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


class NonConvexDomain(SectionLabError):
    pass


class DomainViolation(SectionLabError):
    pass


class DegenerateBarrier(SectionLabError):
    pass


class CoverFailure(SectionLabError):
    def __init__(self, witness: tuple[int, ...]) -> None:
        super().__init__(f"cell {witness} is not covered")
        self.witness = witness


# harness ----------------------------------------------------------------


class HypothesisViolation(SectionLabError):
    def __init__(self, hypothesis: str, witness: Any = None) -> None:
        msg = f"hypothesis '{hypothesis}' does not hold"
        if witness is not None:
            msg += f" (witness {witness!r})"
        super().__init__(msg)
        self.hypothesis = hypothesis
        self.witness = witness

    def details(self) -> dict[str, Any]:
        return {
            **super().details(),
            "hypothesis": self.hypothesis,
            "witness": repr(self.witness),
        }


class NormBudgetExceeded(SectionLabError):
    def __init__(self, measured: float, budget: float) -> None:
        super().__init__(f"data norm {measured:.4g} exceeds budget {budget:.4g}")
        self.measured = measured
        self.budget = budget


class HeightBudgetExceeded(SectionLabError):
    def __init__(self, height: float, h0: float) -> None:
        super().__init__(f"height {height:.4g} exceeds admissible h0 = {h0:.4g}")
        self.height = height
        self.h0 = h0


class ConfigError(SectionLabError):
    def __init__(self, field: str, reason: str) -> None:
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason

    def details(self) -> dict[str, Any]:
        return {**super().details(), "field": self.field, "reason": self.reason}


class BoundaryStencilWarning(UserWarning):
    """One-sided stencils were used inside the two-cell boundary collar."""
