"""Exception hierarchy.

Two branches matter for the CLI exit codes: InputError (bad data or
configuration, exit 2) and NumericalError (a computation failed to
converge or hit a singular system, exit 3).
"""

from __future__ import annotations


class GraphFlowError(Exception):
    """Base class for all package errors."""


class InputError(GraphFlowError):
    """Invalid user-supplied data or configuration."""


class NumericalError(GraphFlowError):
    """A numerical procedure failed; inputs were structurally valid."""


class ColumnNotStochastic(InputError):
    """A column of the coupling matrix does not sum to one."""

    def __init__(self, column: int, total: float):
        self.column = column
        self.total = total
        super().__init__(
            f"coupling matrix is not column stochastic: column {column + 1} "
            f"sums to {total!r}, expected 1"
        )


class SparsityViolation(InputError):
    """A weight was placed on a pair of edges that are not adjacent."""

    def __init__(self, i: int, j: int):
        self.i = i
        self.j = j
        super().__init__(
            f"weight on ({i + 1}, {j + 1}) but edge {j + 1} does not feed edge {i + 1}"
        )


class SourceOrSink(InputError):
    """A vertex is missing an incoming or an outgoing edge."""

    def __init__(self, vertex: int):
        self.vertex = vertex
        super().__init__(f"vertex {vertex + 1} is a source or a sink")


class MisalignedAtom(InputError):
    """A delay atom does not sit on the time grid (or sits inside the
    explicit window (-dt, 0))."""

    def __init__(self, theta: float, detail: str = ""):
        self.theta = theta
        msg = f"delay atom at theta={theta!r} is not usable on this grid"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class IncompatibleHistory(InputError):
    """Strict-mode initialisation with g(0) != f."""

    def __init__(self, deviation: float):
        self.deviation = deviation
        super().__init__(
            f"history at offset 0 deviates from the initial profile by {deviation:.3e}"
        )


class TimeNotOnGrid(InputError):
    """A requested time is not an integer multiple of dt."""

    def __init__(self, t: float, dt: float):
        self.t = t
        self.dt = dt
        super().__init__(f"time {t!r} is not a multiple of dt={dt!r}")


class KernelAtomRequiresGridPath(InputError):
    """Closed-form propagators only exist for scalar and multiplication
    atoms; kernel atoms must go through the grid fallback."""


class ValidationError(InputError):
    """Run-file or argument validation failure; message names the field."""


class DegenerateWindow(InputError):
    """Growth-rate window too short or the trajectory norm underflowed."""


class NoConvergence(NumericalError):
    """An iteration did not reach its tolerance."""


class BoundaryZero(NumericalError):
    """The characteristic determinant (numerically) vanishes on a contour."""


class MaxIterations(NumericalError):
    """An iterative refinement exceeded its iteration budget."""


class LambdaInSpectrum(NumericalError):
    """Resolvent requested at (or too close to) a characteristic root."""

    def __init__(self, lam: complex, abs_det: float):
        self.lam = lam
        self.abs_det = abs_det
        super().__init__(f"lambda={lam!r} has |det H|={abs_det:.3e}; resolvent undefined")


class SingularClosure(NumericalError):
    """The m x m boundary closure system is too ill-conditioned to solve."""

    def __init__(self, cond: float):
        self.cond = cond
        super().__init__(f"closure system condition number {cond:.3e} exceeds 1e12")
