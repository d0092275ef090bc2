"""Finite atomic delay measures and their action on history segments.

The in-edge delay operator applied to a history segment is

    (P z_t)_j(x) = sum over atoms (theta, coeff) of coeff applied to
                   the snapshot z(t + theta) on edge j,

where a coefficient is a plain scalar, a pointwise multiplication
profile, or a quadrature-weighted kernel matrix. The boundary delay
functionals produce one scalar per edge,

    l_k(z_t) = sum over atoms (theta, w) of integral_0^1 w(x) z(t + theta)_k(x) dx,

and the boundary operator routes them through B. Atoms must sit
strictly in the past: theta < 0 always, and theta <= -dt once a grid is
fixed, so one explicit step never needs same-step data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._grid import trapezoid_weights
from .errors import MisalignedAtom, ValidationError

# Relative slack when matching an atom to a grid offset.
ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class Scalar:
    value: float

    def norm(self) -> float:
        return abs(self.value)

    def nonnegative(self) -> bool:
        return self.value >= 0.0


@dataclass(frozen=True)
class Multiplication:
    profile: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.profile, dtype=float)
        if arr.ndim != 1:
            raise ValidationError("multiplication profile must be one-dimensional")
        object.__setattr__(self, "profile", arr)
        arr.setflags(write=False)

    def norm(self) -> float:
        return float(np.abs(self.profile).max())

    def nonnegative(self) -> bool:
        return bool((self.profile >= 0.0).all())


@dataclass(frozen=True)
class Kernel:
    matrix: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.matrix, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValidationError("kernel matrix must be square")
        object.__setattr__(self, "matrix", arr)
        arr.setflags(write=False)

    def norm(self) -> float:
        # max row sum: the sup operator norm on grid functions
        return float(np.abs(self.matrix).sum(axis=1).max())

    def nonnegative(self) -> bool:
        return bool((self.matrix >= 0.0).all())


Coefficient = Scalar | Multiplication | Kernel


@dataclass(frozen=True)
class MeasureAtom:
    theta: float
    coefficient: Coefficient

    def __post_init__(self):
        if not -1.0 <= self.theta < 0.0:
            raise ValidationError(f"atom delay theta={self.theta!r} must lie in [-1, 0)")


@dataclass(frozen=True)
class EdgeDelayMeasure:
    """Atoms of one in-edge delay measure (one edge's mu_j)."""

    atoms: tuple[MeasureAtom, ...] = ()
    positive: bool = False

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if self.positive and not self.is_nonnegative():
            raise ValidationError("measure flagged positive but has a negative coefficient")

    def is_nonnegative(self) -> bool:
        return all(a.coefficient.nonnegative() for a in self.atoms)

    def total_variation(self) -> float:
        return sum(a.coefficient.norm() for a in self.atoms)

    def variation_within(self, alpha: float) -> float:
        """Mass of |mu| on [-alpha, 0]."""
        return sum(a.coefficient.norm() for a in self.atoms if a.theta >= -alpha)


@dataclass(frozen=True)
class BoundaryAtom:
    theta: float
    weight: np.ndarray

    def __post_init__(self):
        if not -1.0 <= self.theta < 0.0:
            raise ValidationError(f"atom delay theta={self.theta!r} must lie in [-1, 0)")
        arr = np.asarray(self.weight, dtype=float)
        if arr.ndim != 1:
            raise ValidationError("boundary weight profile must be one-dimensional")
        object.__setattr__(self, "weight", arr)
        arr.setflags(write=False)

    def weight_norm(self) -> float:
        # L1 norm of the weight: the dual norm against sup-normed profiles
        n = len(self.weight) - 1
        return float(trapezoid_weights(n) @ np.abs(self.weight))


@dataclass(frozen=True)
class BoundaryDelayFunctional:
    """Atoms of one boundary delay functional (one edge's nu_k)."""

    atoms: tuple[BoundaryAtom, ...] = ()
    positive: bool = False

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if self.positive and not self.is_nonnegative():
            raise ValidationError("functional flagged positive but has a negative weight")

    def is_nonnegative(self) -> bool:
        return all(bool((a.weight >= 0.0).all()) for a in self.atoms)

    def total_variation(self) -> float:
        return sum(a.weight_norm() for a in self.atoms)

    def variation_within(self, alpha: float) -> float:
        return sum(a.weight_norm() for a in self.atoms if a.theta >= -alpha)


class HistorySegment:
    """Ring buffer of the last H + 1 state snapshots.

    Snapshot h (0 <= h <= H) is the state at time anchor - h*dt; the
    buffer therefore covers exactly the unit delay horizon [t - 1, t].
    Single writer (the solver pushes), arbitrary concurrent readers
    between steps.
    """

    def __init__(self, samples: np.ndarray, dt: float, anchor: float = 0.0):
        samples = np.asarray(samples)
        if samples.ndim != 3:
            raise ValidationError("history samples must have shape (H+1, m, N+1)")
        depth = samples.shape[0]
        if abs(depth - 1 - 1.0 / dt) > 1e-9:
            raise ValidationError(
                f"history depth {depth} does not cover [-1, 0] at dt={dt!r}"
            )
        self.dt = float(dt)
        self.anchor = float(anchor)
        self._size = depth
        self._buf = np.array(samples)  # copy; slot s holds offset (head - s) mod size
        self._head = 0
        # samples[h] is the snapshot at offset -h*dt; lay them out on the ring
        for h in range(depth):
            self._buf[(self._head - h) % self._size] = samples[h]

    @property
    def depth(self) -> int:
        return self._size

    @property
    def m(self) -> int:
        return self._buf.shape[1]

    def snapshot(self, h: int) -> np.ndarray:
        """State at time anchor - h*dt (h = 0 is the current state)."""
        if not 0 <= h < self._size:
            raise ValidationError(f"history offset {h} outside 0..{self._size - 1}")
        return self._buf[(self._head - h) % self._size]

    def at_offset(self, theta: float, interpolate: bool = False) -> np.ndarray:
        """Snapshot at time anchor + theta, theta in [-1, 0].

        Off-grid theta is linearly interpolated between the neighbouring
        snapshots when `interpolate` is set and rejected otherwise.
        """
        if theta > 0.0 or theta < -1.0 - ALIGN_TOL:
            raise MisalignedAtom(theta, "outside the history window [-1, 0]")
        h_float = -theta / self.dt
        h = int(round(h_float))
        if abs(h_float - h) <= ALIGN_TOL * max(1.0, h_float):
            return self.snapshot(min(h, self._size - 1))
        if not interpolate:
            raise MisalignedAtom(theta, "off-grid and interpolation is disabled")
        lo = int(np.floor(h_float))
        hi = min(lo + 1, self._size - 1)
        frac = h_float - lo
        return (1.0 - frac) * self.snapshot(lo) + frac * self.snapshot(hi)

    def push(self, values: np.ndarray) -> None:
        """Advance the anchor by dt, installing `values` as the new snapshot 0."""
        self._head = (self._head + 1) % self._size
        self._buf[self._head] = values
        self.anchor += self.dt

    def copy(self) -> "HistorySegment":
        dup = object.__new__(HistorySegment)
        dup.dt = self.dt
        dup.anchor = self.anchor
        dup._size = self._size
        dup._buf = self._buf.copy()
        dup._head = self._head
        return dup

    def snapshots_oldest_last(self) -> np.ndarray:
        """All snapshots as an array indexed by offset h = 0..H."""
        idx = (self._head - np.arange(self._size)) % self._size
        return self._buf[idx]


def _check_window(theta: float, dt: float) -> None:
    if theta > -dt * (1.0 - ALIGN_TOL):
        raise MisalignedAtom(
            theta, f"atoms must satisfy theta <= -dt (dt={dt!r}) to keep the step explicit"
        )


def validate_atoms(
    measures, functionals, dt: float, interpolate: bool = False
) -> None:
    """Check every atom against the time grid before a run starts."""
    for meas in measures or ():
        if meas is None:
            continue
        for atom in meas.atoms:
            _check_window(atom.theta, dt)
            if not interpolate:
                h_float = -atom.theta / dt
                if abs(h_float - round(h_float)) > ALIGN_TOL * max(1.0, h_float):
                    raise MisalignedAtom(atom.theta, "off-grid and interpolation is disabled")
    for func in functionals or ():
        if func is None:
            continue
        for atom in func.atoms:
            _check_window(atom.theta, dt)
            if not interpolate:
                h_float = -atom.theta / dt
                if abs(h_float - round(h_float)) > ALIGN_TOL * max(1.0, h_float):
                    raise MisalignedAtom(atom.theta, "off-grid and interpolation is disabled")


def apply_P(measures, history: HistorySegment, interpolate: bool = False) -> np.ndarray:
    """Evaluate the in-edge delay source (P z_t) on the full grid.

    `measures` is one EdgeDelayMeasure (or None) per edge. Scalar atoms
    scale the snapshot, multiplication atoms act pointwise, kernel atoms
    apply their quadrature-weighted matrix.
    """
    sample = history.snapshot(0)
    out = np.zeros_like(sample)
    if measures is None:
        return out
    if len(measures) != history.m:
        raise ValidationError(f"expected {history.m} measures, got {len(measures)}")
    for j, meas in enumerate(measures):
        if meas is None:
            continue
        for atom in meas.atoms:
            _check_window(atom.theta, history.dt)
            seg = history.at_offset(atom.theta, interpolate)[j]
            coeff = atom.coefficient
            if isinstance(coeff, Scalar):
                out[j] += coeff.value * seg
            elif isinstance(coeff, Multiplication):
                if len(coeff.profile) != seg.shape[-1]:
                    raise ValidationError(
                        f"multiplication profile length {len(coeff.profile)} does not "
                        f"match grid of {seg.shape[-1]} nodes"
                    )
                out[j] += coeff.profile * seg
            else:
                if coeff.matrix.shape[0] != seg.shape[-1]:
                    raise ValidationError(
                        f"kernel of size {coeff.matrix.shape} does not match grid of "
                        f"{seg.shape[-1]} nodes"
                    )
                out[j] += coeff.matrix @ seg
    return out


def ell_values(
    functionals,
    history: HistorySegment,
    interpolate: bool = False,
    time_shift: float = 0.0,
) -> np.ndarray:
    """Raw boundary functional values (l_k z_{t+time_shift})_k.

    `time_shift` lets the solver evaluate the functionals one step ahead
    of the buffer anchor: an atom at theta then reads the snapshot at
    offset theta + time_shift, which is stored history whenever
    theta <= -dt.
    """
    m = history.m
    sample = history.snapshot(0)
    n = sample.shape[-1] - 1
    w_quad = trapezoid_weights(n)
    out = np.zeros(m, dtype=sample.dtype)
    if functionals is None:
        return out
    if len(functionals) != m:
        raise ValidationError(f"expected {m} functionals, got {len(functionals)}")
    for k, func in enumerate(functionals):
        if func is None:
            continue
        for atom in func.atoms:
            _check_window(atom.theta, history.dt)
            seg = history.at_offset(atom.theta + time_shift, interpolate)[k]
            if len(atom.weight) != n + 1:
                raise ValidationError(
                    f"boundary weight length {len(atom.weight)} does not match grid of "
                    f"{n + 1} nodes"
                )
            out[k] += (w_quad * atom.weight) @ seg
    return out


def apply_L(
    functionals,
    B: np.ndarray,
    history: HistorySegment,
    interpolate: bool = False,
    time_shift: float = 0.0,
) -> np.ndarray:
    """Boundary delay operator: B applied to the functional values."""
    return B @ ell_values(functionals, history, interpolate, time_shift)


def small_time_variation(measures, functionals, alpha: float) -> float:
    """Total delay mass within [-alpha, 0].

    This is the quantity whose smallness for small alpha gives the
    contraction window in the well-posedness argument; it vanishes for
    alpha below the smallest atom delay and reaches the full total
    variation at alpha = 1.
    """
    if alpha <= 0.0:
        raise ValidationError(f"alpha={alpha!r} must be positive")
    total = 0.0
    for meas in measures or ():
        if meas is not None:
            total += meas.variation_within(alpha)
    for func in functionals or ():
        if func is not None:
            total += func.variation_within(alpha)
    return total
