"""Spectrum and resolvent of the delayed network flow generator.

For atomic delay measures an eigenpair has history e^{lambda*theta} x,
which collapses the infinite-dimensional eigenvalue condition to an
m x m characteristic matrix

    H(lambda) = diag(Phi_j(1; lambda)) - B (I + diag(N_k(lambda))),

where Phi_j solves the per-edge eigen-ODE u' = (lambda - c_j) u with
u(0) = 1, c_j(lambda, s) = sum_atoms e^{lambda*theta} k_j(s), and
N_k(lambda) = sum_atoms e^{lambda*theta} integral_0^1 w(x) Phi_k(x) dx
is the boundary-delay contribution. Eigenvalue candidates are exactly
the zeros of det H, located by argument-principle winding counts over
subrectangles followed by Newton polishing, and certified a posteriori
by a residual against the discretized generator.

The resolvent solves (lambda - generator)(x, phi) = (f, g): the history
row gives phi(theta) = e^{lambda*theta} x + integral_theta^0
e^{lambda(theta-s)} g(s) ds, substitution into the first row leaves
per-edge linear ODEs integrated with an exact-kernel integrating-factor
rule, and the delayed boundary condition closes an m x m system for the
outflow vector x(0); that closure matrix is H(lambda) again.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._grid import cumulative_trapezoid, grid_points, trapezoid_weights
from .delay import HistorySegment, Kernel, Multiplication, Scalar, apply_P, ell_values
from .errors import (
    BoundaryZero,
    KernelAtomRequiresGridPath,
    LambdaInSpectrum,
    MaxIterations,
    MisalignedAtom,
    SingularClosure,
    ValidationError,
)
from .graph import MetricGraph

log = logging.getLogger(__name__)

DET_FLOOR = 1e-14          # |det| below this on a contour point: root on contour
DEDUP_TOL = 1e-8
SERIES_CUTOFF = 1e-4       # switch the phi-coefficients to series below this
NULLSPACE_TOL = 1e-10
CLOSURE_COND_LIMIT = 1e12
SPECTRUM_DET_TOL = 1e-12   # relative to the Hadamard bound of H


@dataclass(frozen=True)
class CharacteristicMatrix:
    lam: complex
    H: np.ndarray

    def det(self) -> complex:
        return complex(np.linalg.det(self.H))


@dataclass
class Root:
    lam: complex
    abs_det: float
    newton_iterations: int
    eigen_residual: float
    multiplicity: int = 1


@dataclass
class SpectrumReport:
    rectangle: tuple[float, float, float, float]
    roots: list[Root] = field(default_factory=list)
    windings: list[tuple[tuple[float, float, float, float], int]] = field(default_factory=list)

    @property
    def winding_total(self) -> int:
        return sum(w for _, w in self.windings)


def _offset_index(theta: float, n: int) -> int:
    h_float = -theta * n
    h = int(round(h_float))
    if abs(h_float - h) > 1e-9 * max(1.0, h_float):
        raise MisalignedAtom(theta, "spectral operations need grid-aligned atoms")
    return h


def _infer_grid(measures, functionals, fallback: int = 200) -> int:
    sizes = set()
    for meas in measures or ():
        for atom in getattr(meas, "atoms", ()):
            coeff = atom.coefficient
            if isinstance(coeff, Multiplication):
                sizes.add(len(coeff.profile) - 1)
            elif isinstance(coeff, Kernel):
                sizes.add(coeff.matrix.shape[0] - 1)
    for func in functionals or ():
        for atom in getattr(func, "atoms", ()):
            sizes.add(len(atom.weight) - 1)
    if len(sizes) > 1:
        raise ValidationError(f"atoms sampled on different grids: {sorted(sizes)}")
    return sizes.pop() if sizes else fallback


class _CharEvaluator:
    """Precomputed assembly of H(lambda) for repeated evaluation."""

    def __init__(self, graph: MetricGraph, measures, functionals, n: int):
        self.graph = graph
        self.n = n
        self.dx = 1.0 / n
        self.x = grid_points(n)
        self.w_quad = trapezoid_weights(n)
        m = graph.m
        measures = measures if measures is not None else [None] * m
        functionals = functionals if functionals is not None else [None] * m
        if len(measures) != m or len(functionals) != m:
            raise ValidationError("need one measure and one functional slot per edge")

        # per edge: (theta, profile-on-grid) for the eigen-ODE coefficient
        self.edge_atoms: list[list[tuple[float, np.ndarray, float]]] = []
        for meas in measures:
            atoms = []
            for atom in getattr(meas, "atoms", () if meas is None else meas.atoms):
                coeff = atom.coefficient
                if isinstance(coeff, Scalar):
                    profile = np.full(n + 1, coeff.value)
                elif isinstance(coeff, Multiplication):
                    if len(coeff.profile) != n + 1:
                        raise ValidationError(
                            f"multiplication profile length {len(coeff.profile)} "
                            f"!= grid nodes {n + 1}"
                        )
                    profile = coeff.profile
                else:
                    raise KernelAtomRequiresGridPath(
                        "kernel atoms have no closed-form propagator; "
                        "use the resolvent grid path"
                    )
                atoms.append((atom.theta, profile, float(self.w_quad @ profile)))
            self.edge_atoms.append(atoms)

        # per edge: boundary atoms as (theta, quadrature-weighted w)
        self.boundary_atoms: list[list[tuple[float, np.ndarray]]] = []
        for func in functionals:
            atoms = []
            for atom in getattr(func, "atoms", () if func is None else func.atoms):
                if len(atom.weight) != n + 1:
                    raise ValidationError(
                        f"boundary weight length {len(atom.weight)} != grid nodes {n + 1}"
                    )
                atoms.append((atom.theta, self.w_quad * atom.weight))
            self.boundary_atoms.append(atoms)

    def coefficient_grid(self, lam: complex, j: int) -> np.ndarray:
        """c_j(lambda, s) on the grid."""
        c = np.zeros(self.n + 1, dtype=complex)
        for theta, profile, _ in self.edge_atoms[j]:
            c = c + np.exp(lam * theta) * profile
        return c

    def propagator_profile(self, lam: complex, j: int) -> np.ndarray:
        """Phi_j(x; lambda) = exp(lambda x - integral_0^x c_j), trapezoid."""
        if not self.edge_atoms[j]:
            return np.exp(lam * self.x)
        c = self.coefficient_grid(lam, j)
        return np.exp(lam * self.x - cumulative_trapezoid(c, self.dx))

    def propagator_end(self, lam: complex, j: int) -> complex:
        total = sum(
            np.exp(lam * theta) * integral for theta, _, integral in self.edge_atoms[j]
        )
        return np.exp(lam - total)

    def boundary_term(self, lam: complex, k: int, phi: np.ndarray | None = None) -> complex:
        if not self.boundary_atoms[k]:
            return 0.0 + 0.0j
        if phi is None:
            phi = self.propagator_profile(lam, k)
        return sum(np.exp(lam * theta) * (wq @ phi) for theta, wq in self.boundary_atoms[k])

    def matrix(self, lam: complex) -> np.ndarray:
        m = self.graph.m
        phi_end = np.array([self.propagator_end(lam, j) for j in range(m)])
        nvals = np.array([self.boundary_term(lam, k) for k in range(m)])
        return np.diag(phi_end) - self.graph.B * (1.0 + nvals)[None, :]

    def det(self, lam: complex) -> complex:
        return complex(np.linalg.det(self.matrix(lam)))


def char_matrix(
    lam: complex, graph: MetricGraph, measures=None, functionals=None, n: int | None = None
) -> CharacteristicMatrix:
    """Assemble H(lambda); det H = 0 flags point-spectrum candidates.

    With all delays empty this is exactly e^lambda I - B.
    """
    if n is None:
        n = _infer_grid(measures, functionals)
    ev = _CharEvaluator(graph, measures, functionals, n)
    return CharacteristicMatrix(lam=lam, H=ev.matrix(lam))


def char_det(lam, graph, measures=None, functionals=None, n=None) -> complex:
    return char_matrix(lam, graph, measures, functionals, n).det()


def edge_propagator(
    lam: complex, measure, x: float, n: int | None = None
) -> complex:
    """Phi_j(x; lambda) at one grid point (x must sit on the grid)."""
    if n is None:
        n = _infer_grid([measure] if measure is not None else None, None)
    dx = 1.0 / n
    i = int(round(x * n))
    if abs(x * n - i) > 1e-9:
        raise ValidationError(f"x={x!r} is not a grid point at n={n}")
    xs = grid_points(n)
    if measure is None or not measure.atoms:
        return complex(np.exp(lam * xs[i]))
    c = np.zeros(n + 1, dtype=complex)
    for atom in measure.atoms:
        coeff = atom.coefficient
        if isinstance(coeff, Scalar):
            profile = np.full(n + 1, coeff.value)
        elif isinstance(coeff, Multiplication):
            profile = coeff.profile
        else:
            raise KernelAtomRequiresGridPath(
                "kernel atoms have no closed-form propagator"
            )
        c = c + np.exp(lam * atom.theta) * profile
    return complex(np.exp(lam * xs[i] - cumulative_trapezoid(c, dx)[i]))


def boundary_eigvalue_term(lam: complex, functional, phi: np.ndarray) -> complex:
    """N_k(lambda) from a propagator profile sampled on the grid."""
    if functional is None or not functional.atoms:
        return 0.0 + 0.0j
    n = len(phi) - 1
    wq = trapezoid_weights(n)
    total = 0.0 + 0.0j
    for atom in functional.atoms:
        if len(atom.weight) != n + 1:
            raise ValidationError("weight and propagator grids differ")
        total += np.exp(lam * atom.theta) * ((wq * atom.weight) @ phi)
    return total


# ----------------------------------------------------------------------
# root finding: winding numbers + Newton polish


def _segment_phase(f, za, fa, zb, fb, depth, max_abs):
    """Accumulated argument change of f along [za, zb], refined until each
    sub-segment turns by at most pi/2."""
    delta = np.angle(fb / fa)
    if abs(delta) <= 0.5 * np.pi:
        return delta
    if depth >= 48 or abs(zb - za) < 1e-12:
        raise BoundaryZero(f"cannot track the phase near {0.5 * (za + zb)!r}")
    zm = 0.5 * (za + zb)
    fm = f(zm)
    am = abs(fm)
    if am < DET_FLOOR:
        raise BoundaryZero(f"|det H|={am:.2e} at contour point {zm!r}")
    max_abs[0] = max(max_abs[0], am)
    return _segment_phase(f, za, fa, zm, fm, depth + 1, max_abs) + _segment_phase(
        f, zm, fm, zb, fb, depth + 1, max_abs
    )


def _box_winding(f, box):
    re0, re1, im0, im1 = box
    corners = [
        re0 + 1j * im0,
        re1 + 1j * im0,
        re1 + 1j * im1,
        re0 + 1j * im1,
        re0 + 1j * im0,
    ]
    total = 0.0
    max_abs = [0.0]
    for a, b in zip(corners, corners[1:]):
        pts = np.linspace(a, b, 9)
        vals = [f(z) for z in pts]
        for v in vals:
            av = abs(v)
            if av < DET_FLOOR:
                raise BoundaryZero(f"|det H|={av:.2e} on the contour of {box}")
            max_abs[0] = max(max_abs[0], av)
        for (za, fa), (zb, fb) in zip(zip(pts, vals), zip(pts[1:], vals[1:])):
            total += _segment_phase(f, za, fa, zb, fb, 0, max_abs)
    winding = int(round(total / (2.0 * np.pi)))
    return winding, max_abs[0]


def _newton_polish(f, z0, tol_abs, floor_abs, box, max_iter=60):
    """Newton iteration with a central-difference derivative.

    Runs past tol_abs toward floor_abs (machine-level) while it keeps
    improving, so reported roots are as accurate as the determinant
    permits.
    """
    z = z0
    best = (abs(f(z0)), z0, 0)
    for it in range(1, max_iter + 1):
        fz = f(z)
        az = abs(fz)
        if az < best[0]:
            best = (az, z, it)
        if az <= floor_abs:
            return z, it
        h = 1e-6 * (1.0 + abs(z))
        deriv = (f(z + h) - f(z - h)) / (2.0 * h)
        if deriv == 0:
            break
        step = fz / deriv
        z = z - step
        if abs(step) < 1e-16 * (1.0 + abs(z)):
            fz = f(z)
            if abs(fz) < best[0]:
                best = (abs(fz), z, it + 1)
            break
    if best[0] <= tol_abs:
        return best[1], best[2]
    raise MaxIterations(
        f"Newton stalled at |det H|={best[0]:.3e} (target {tol_abs:.3e}) near {best[1]!r}"
    )


def _odd(k: int) -> int:
    return k if k % 2 == 1 else k + 1


def find_roots(
    graph: MetricGraph,
    measures,
    functionals,
    rectangle: tuple[float, float, float, float],
    grid_density: float = 4.0,
    tol: float = 1e-9,
    n: int | None = None,
    workers: int = 1,
) -> SpectrumReport:
    """Locate zeros of det H inside a rectangle of the complex plane.

    The rectangle is subdivided (about `grid_density` boxes per unit
    length, forced odd per axis so symmetric rectangles do not put box
    edges on axis roots); each subrectangle gets a winding number from
    phase tracking along its boundary, and boxes with nonzero winding
    are polished by Newton iteration. If the determinant vanishes on a
    contour the whole rectangle is shifted by 1e-7 and searched once
    more.
    """
    if n is None:
        n = _infer_grid(measures, functionals)
    ev = _CharEvaluator(graph, measures, functionals, n)
    try:
        return _search(ev, graph, measures, functionals, rectangle, grid_density,
                       tol, n, workers)
    except BoundaryZero:
        log.warning("determinant vanishes on a contour; retrying a shifted rectangle")
        shifted = tuple(v + 1e-7 for v in rectangle)
        return _search(ev, graph, measures, functionals, shifted, grid_density,
                       tol, n, workers)


def _search(ev, graph, measures, functionals, rectangle, grid_density, tol, n, workers):
    re0, re1, im0, im1 = rectangle
    if not (re1 > re0 and im1 > im0):
        raise ValidationError(f"rectangle {rectangle!r} is empty")
    f = ev.det
    n_re = _odd(max(1, round((re1 - re0) * grid_density)))
    n_im = _odd(max(1, round((im1 - im0) * grid_density)))
    res = np.linspace(re0, re1, n_re + 1)
    ims = np.linspace(im0, im1, n_im + 1)
    boxes = [
        (res[i], res[i + 1], ims[k], ims[k + 1])
        for i in range(n_re)
        for k in range(n_im)
    ]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda b: _box_winding(f, b), boxes))
    else:
        results = [_box_winding(f, b) for b in boxes]

    report = SpectrumReport(rectangle=tuple(rectangle))
    raw_roots: list[tuple[complex, int, int]] = []  # (root, iterations, multiplicity)
    for box, (winding, max_abs) in zip(boxes, results):
        if winding == 0:
            continue
        report.windings.append((box, winding))
        tol_abs = tol * max_abs
        floor_abs = 1e-15 * max_abs
        starts = [
            complex(0.5 * (box[0] + box[1]), 0.5 * (box[2] + box[3])),
            complex(0.75 * box[0] + 0.25 * box[1], 0.75 * box[2] + 0.25 * box[3]),
            complex(0.25 * box[0] + 0.75 * box[1], 0.25 * box[2] + 0.75 * box[3]),
            complex(0.75 * box[0] + 0.25 * box[1], 0.25 * box[2] + 0.75 * box[3]),
            complex(0.25 * box[0] + 0.75 * box[1], 0.75 * box[2] + 0.25 * box[3]),
        ]
        pad_re = 0.5 * (box[1] - box[0])
        pad_im = 0.5 * (box[3] - box[2])
        found = None
        fallback = None
        last_error = None
        for z0 in starts:
            try:
                z, iters = _newton_polish(f, z0, tol_abs, floor_abs, box)
            except MaxIterations as exc:
                last_error = exc
                continue
            inside = (
                box[0] - pad_re <= z.real <= box[1] + pad_re
                and box[2] - pad_im <= z.imag <= box[3] + pad_im
            )
            if inside:
                found = (z, iters)
                break
            if fallback is None:
                fallback = (z, iters)
        if found is None and fallback is not None:
            log.warning("polished root %r drifted outside its box %r", fallback[0], box)
            found = fallback
        if found is None:
            raise last_error or MaxIterations(f"no Newton start converged in box {box}")
        raw_roots.append((found[0], found[1], winding))

    # deduplicate within 1e-8, keeping multiplicity bookkeeping intact
    raw_roots.sort(key=lambda r: (r[0].real, r[0].imag))
    for z, iters, mult in raw_roots:
        for root in report.roots:
            if abs(root.lam - z) <= DEDUP_TOL:
                root.multiplicity += mult
                break
        else:
            residual = eigen_residual(z, graph, measures, functionals, n)
            report.roots.append(
                Root(
                    lam=z,
                    abs_det=abs(f(z)),
                    newton_iterations=iters,
                    eigen_residual=residual,
                    multiplicity=mult,
                )
            )
    return report


def rightmost_root(report: SpectrumReport) -> Root:
    if not report.roots:
        raise ValidationError("spectrum report holds no roots")
    return max(report.roots, key=lambda r: r.lam.real)


# ----------------------------------------------------------------------
# generator residuals


def generator_residual(
    lam: complex,
    x: np.ndarray,
    phi: np.ndarray,
    f: np.ndarray,
    g: np.ndarray,
    graph: MetricGraph,
    measures,
    functionals,
) -> float:
    """Max-norm residual of (lambda - generator)(x, phi) = (f, g).

    Uses the discretized generator: spatial forward differences, the
    delay source from the sampled history, the delayed boundary
    relation as the domain condition, and forward differences in the
    history variable.
    """
    x = np.asarray(x)
    phi = np.asarray(phi)
    n = x.shape[-1] - 1
    dt = 1.0 / n
    hist = HistorySegment(phi, dt=dt)
    p_grid = apply_P(measures, hist)
    ell = ell_values(functionals, hist)

    r_state = lam * x[:, :-1] - (x[:, 1:] - x[:, :-1]) / dt - p_grid[:, :-1] - f[:, :-1]
    r_boundary = x[:, -1] - graph.B @ (x[:, 0] + ell)
    r_history = lam * phi[1:] - (phi[:-1] - phi[1:]) / dt - g[1:]
    r_anchor = phi[0] - x
    return float(
        max(
            np.abs(r_state).max(),
            np.abs(r_boundary).max(),
            np.abs(r_history).max(),
            np.abs(r_anchor).max(),
        )
    )


def eigen_residual(
    lam: complex, graph: MetricGraph, measures, functionals, n: int
) -> float:
    """Residual of the reconstructed eigenpair against the discretized
    generator, relative to the eigenpair's max norm.

    The eigenvector direction is the smallest singular direction of
    H(lambda); when the second singular value also (numerically)
    vanishes the eigenvalue is multiple and the residual is taken over
    the whole numerical null space.
    """
    ev = _CharEvaluator(graph, measures, functionals, n)
    H = ev.matrix(lam)
    _, svals, vh = np.linalg.svd(H)
    m = graph.m
    null_dims = [m - 1]
    if m > 1 and svals[-2] < NULLSPACE_TOL:
        null_dims = [i for i in range(m) if svals[i] < NULLSPACE_TOL]
        log.warning(
            "H(%r) has a %d-dimensional numerical null space; "
            "residual taken over all of it",
            lam,
            len(null_dims),
        )
    profiles = np.array([ev.propagator_profile(lam, j) for j in range(m)])
    thetas = -np.arange(n + 1) / n
    worst = 0.0
    zero_f = np.zeros((m, n + 1))
    zero_g = np.zeros((n + 1, m, n + 1))
    for idx in null_dims:
        a = vh[idx].conj()
        u = profiles * a[:, None]
        phi = np.exp(lam * thetas)[:, None, None] * u[None, :, :]
        res = generator_residual(lam, u, phi, zero_f, zero_g, graph, measures, functionals)
        scale = max(np.abs(u).max(), np.abs(phi).max())
        worst = max(worst, float(res / scale))
    return worst


# ----------------------------------------------------------------------
# resolvent


def _phi_coeffs(z: complex):
    """E, q1, r1 for the history march with kernel e^{-lambda tau}:
    z = -lambda*dt."""
    E = np.exp(z)
    if abs(z) < SERIES_CUTOFF:
        q1 = 0.5 + z / 6.0 + z * z / 24.0
        r1 = 0.5 + z / 3.0 + z * z / 8.0
    else:
        q1 = (E - 1.0 - z) / (z * z)
        r1 = (E * (z - 1.0) + 1.0) / (z * z)
    return E, q1, r1


def _q0(z: np.ndarray) -> np.ndarray:
    small = np.abs(z) < SERIES_CUTOFF
    zs = np.where(small, 1.0, z)
    out = (np.exp(zs) - 1.0) / zs
    return np.where(small, 1.0 + z / 2.0 + z * z / 6.0, out)


def _q1(z: np.ndarray) -> np.ndarray:
    small = np.abs(z) < SERIES_CUTOFF
    zs = np.where(small, 1.0, z)
    out = (np.exp(zs) - 1.0 - zs) / (zs * zs)
    return np.where(small, 0.5 + z / 6.0 + z * z / 24.0, out)


def _r1(z: np.ndarray) -> np.ndarray:
    small = np.abs(z) < SERIES_CUTOFF
    zs = np.where(small, 1.0, z)
    out = (np.exp(zs) * (zs - 1.0) + 1.0) / (zs * zs)
    return np.where(small, 0.5 + z / 3.0 + z * z / 8.0, out)


def _split_atoms(measures, m):
    """Per edge: diagonal atoms (theta, profile-or-scalar) and kernel atoms."""
    diag, kernels = [], []
    measures = measures if measures is not None else [None] * m
    for meas in measures:
        d, k = [], []
        for atom in getattr(meas, "atoms", () if meas is None else meas.atoms):
            coeff = atom.coefficient
            if isinstance(coeff, Scalar):
                d.append((atom.theta, coeff.value))
            elif isinstance(coeff, Multiplication):
                d.append((atom.theta, coeff.profile))
            else:
                k.append((atom.theta, coeff.matrix))
        diag.append(d)
        kernels.append(k)
    return diag, kernels


def _apply_measures_to_history(measures, samples, n):
    """P applied to known history samples (shape (H+1, m, n+1))."""
    m = samples.shape[1]
    out = np.zeros((m, n + 1), dtype=samples.dtype)
    if measures is None:
        return out
    for j, meas in enumerate(measures):
        if meas is None:
            continue
        for atom in meas.atoms:
            h = _offset_index(atom.theta, n)
            seg = samples[h, j]
            coeff = atom.coefficient
            if isinstance(coeff, Scalar):
                out[j] += coeff.value * seg
            elif isinstance(coeff, Multiplication):
                out[j] += coeff.profile * seg
            else:
                out[j] += coeff.matrix @ seg
    return out


def resolvent_apply(
    lam: complex,
    f: np.ndarray,
    g: np.ndarray,
    graph: MetricGraph,
    measures=None,
    functionals=None,
    kernel_tol: float = 1e-10,
    kernel_max_iter: int = 100,
):
    """Solve (lambda - generator)(x, phi) = (f, g) on the grid.

    Returns (x, phi) with x of shape (m, n+1) and phi of shape
    (n+1, m, n+1), phi[h] being the history at offset -h/n. Kernel atoms
    are handled by a fixed-point iteration preconditioned by the
    scalar/multiplication solve.
    """
    f = np.asarray(f, dtype=complex)
    g = np.asarray(g, dtype=complex)
    m = graph.m
    n = f.shape[-1] - 1
    if f.shape != (m, n + 1):
        raise ValidationError(f"f shape {f.shape} != {(m, n + 1)}")
    if g.shape != (n + 1, m, n + 1):
        raise ValidationError(f"g shape {g.shape} != {(n + 1, m, n + 1)}")
    dt = 1.0 / n
    dx = dt
    lam = complex(lam)

    diag_atoms, kernel_atoms = _split_atoms(measures, m)
    has_kernels = any(kernel_atoms[j] for j in range(m))

    if not has_kernels:
        # spectrum guard against the closed-form characteristic matrix
        H_char = char_matrix(lam, graph, measures, functionals, n=n).H
        det = complex(np.linalg.det(H_char))
        hadamard = float(np.prod(np.sqrt((np.abs(H_char) ** 2).sum(axis=1))))
        if abs(det) <= SPECTRUM_DET_TOL * max(hadamard, 1e-300):
            raise LambdaInSpectrum(lam, abs(det))

    # history row: phi(theta) = e^{lambda theta} x + G(theta), marched with
    # the exact exponential kernel and linear interpolation of g
    G = np.zeros_like(g)
    E_h, q1_h, r1_h = _phi_coeffs(-lam * dt)
    for h in range(1, n + 1):
        G[h] = E_h * G[h - 1] + dt * (q1_h * g[h] + r1_h * g[h - 1])

    # eigen-ODE coefficient a(s) = lambda - c(lambda, s) per edge
    a = np.full((m, n + 1), lam, dtype=complex)
    for j in range(m):
        for theta, payload in diag_atoms[j]:
            a[j] -= np.exp(lam * theta) * np.asarray(payload)
    z_cells = 0.5 * (a[:, :-1] + a[:, 1:]) * dx

    # Each edge is marched in its stable direction: growing modes
    # (Re a >= 0) are parametrized by the inflow value x(1), decaying
    # ones by the outflow x(0), which keeps homogeneous profiles bounded
    # and avoids cancellation between huge particular and homogeneous
    # parts.
    backward = a.real.mean(axis=1) >= 0.0
    prof = np.empty((m, n + 1), dtype=complex)     # Phi (forward) or psi (backward)
    for j in range(m):
        if backward[j]:
            prof[j, -1] = 1.0
            prof[j, :-1] = np.cumprod(np.exp(-z_cells[j])[::-1])[::-1]
        else:
            prof[j, 0] = 1.0
            prof[j, 1:] = np.cumprod(np.exp(z_cells[j]))

    wq = trapezoid_weights(n)
    functionals = functionals if functionals is not None else [None] * m
    if len(functionals) != m:
        raise ValidationError("need one functional slot per edge")

    # closure matrix in the mixed unknowns y_j (= x_j(1) backward, x_j(0)
    # forward); columns equal the characteristic matrix columns up to a
    # positive rescaling, so its zero set is unchanged
    nvals = np.zeros(m, dtype=complex)
    for k, func in enumerate(functionals):
        if func is None:
            continue
        for atom in func.atoms:
            nvals[k] += np.exp(lam * atom.theta) * ((wq * atom.weight) @ prof[k])
    coeff_end = np.where(backward, 1.0, prof[:, -1])    # y_j coefficient in x_j(1)
    coeff_start = np.where(backward, prof[:, 0], 1.0)   # y_j coefficient in x_j(0)
    M = np.diag(coeff_end) - graph.B * (coeff_start + nvals)[None, :]
    cond = float(np.linalg.cond(M))
    if cond > CLOSURE_COND_LIMIT:
        raise SingularClosure(cond)
    if has_kernels:
        det = complex(np.linalg.det(M))
        hadamard = float(np.prod(np.sqrt((np.abs(M) ** 2).sum(axis=1))))
        if abs(det) <= SPECTRUM_DET_TOL * max(hadamard, 1e-300):
            raise LambdaInSpectrum(lam, abs(det))

    fwd = ~backward
    E_f = np.exp(z_cells)
    q0_f, q1_f = _q0(z_cells), _q1(z_cells)
    E_b = np.exp(-z_cells)
    q1_b, r1_b = _q1(-z_cells), _r1(-z_cells)

    base_F = f + _apply_measures_to_history(measures, G, n)

    def solve_once(feedback):
        F = base_F + feedback
        part = np.zeros((m, n + 1), dtype=complex)
        for i in range(n):  # forward particular, zero at parameter 0
            part[fwd, i + 1] = E_f[fwd, i] * part[fwd, i] - dx * (
                (q0_f[fwd, i] - q1_f[fwd, i]) * F[fwd, i] + q1_f[fwd, i] * F[fwd, i + 1]
            )
        for i in range(n - 1, -1, -1):  # backward particular, zero at parameter 1
            part[backward, i] = E_b[backward, i] * part[backward, i + 1] + dx * (
                q1_b[backward, i] * F[backward, i] + r1_b[backward, i] * F[backward, i + 1]
            )
        r = np.zeros(m, dtype=complex)
        for k, func in enumerate(functionals):
            if func is None:
                continue
            for atom in func.atoms:
                h = _offset_index(atom.theta, n)
                wqa = wq * atom.weight
                r[k] += np.exp(lam * atom.theta) * (wqa @ part[k]) + wqa @ G[h, k]
        rhs = graph.B @ (np.where(backward, part[:, 0], 0.0) + r)
        rhs -= np.where(backward, 0.0, part[:, -1])
        y = np.linalg.solve(M, rhs)
        return prof * y[:, None] + part

    if not has_kernels:
        x = solve_once(np.zeros((m, n + 1), dtype=complex))
    else:
        feedback = np.zeros((m, n + 1), dtype=complex)
        x = solve_once(feedback)
        for _ in range(kernel_max_iter):
            feedback = np.zeros((m, n + 1), dtype=complex)
            for j in range(m):
                for theta, K in kernel_atoms[j]:
                    feedback[j] += np.exp(lam * theta) * (K @ x[j])
            x_new = solve_once(feedback)
            if np.abs(x_new - x).max() <= kernel_tol * (1.0 + np.abs(x_new).max()):
                x = x_new
                break
            x = x_new
        else:
            raise MaxIterations(
                f"kernel fixed point did not converge in {kernel_max_iter} iterations"
            )

    thetas = -np.arange(n + 1) / n
    phi = np.exp(lam * thetas)[:, None, None] * x[None, :, :] + G
    return x, phi
