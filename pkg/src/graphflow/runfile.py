"""Run-file parsing: one JSON file describes the operator completely.

All commands (simulate, spectrum, check, resolvent) consume the same
file, which guarantees that spectra and trajectories describe the same
operator. Indices in the file are 1-based, matching the usual graph
notation; the Python API is 0-based.

Schema (see README for the full reference):

    {
      "graph":       {"vertices": n, "edges": [{"e0":, "e1":}], "weights": [...]},
      "measures":    [{"edge": j, "atoms": [{"theta":, "kind":, "value":}]}],
      "functionals": [{"edge": k, "atoms": [{"theta":, "weight": [...] | w}]}],
      "initial":     {"profile": name | [names] | [[...]], "history": "frozen" |
                      "traveling" | [[[...]]]},
      "sim":         {"N":, "t_final":, "output_every":, "interpolate_delays":,
                      "snapshots":},
      "spectrum":    {"rectangle": [re0, re1, im0, im1], "grid_density":, "tol":},
      "check":       {"lambda0":},
      "mode":        "strict" | "lenient"
    }

A bare number for a functional "weight" means the constant profile with
that value on any grid; profile names are resolved per grid, which keeps
run files grid-independent unless inline arrays are used.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .delay import (
    BoundaryAtom,
    BoundaryDelayFunctional,
    EdgeDelayMeasure,
    Kernel,
    MeasureAtom,
    Multiplication,
    Scalar,
)
from .errors import GraphFlowError, ValidationError
from .graph import MetricGraph, graph_from_json
from .solver import SimConfig


def _builtin_constant(x):
    return np.ones_like(x)


def _builtin_sine(x):
    return np.sin(2 * np.pi * x)


def _builtin_cosine(x):
    return np.cos(2 * np.pi * x)


def _builtin_bump(x):
    # smooth compactly supported bump centered at 1/2
    r = (x - 0.5) / 0.4
    out = np.zeros_like(x)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


def _builtin_parabola(x):
    return 4.0 * x * (1.0 - x)


BUILTIN_PROFILES = {
    "constant": _builtin_constant,
    "sine": _builtin_sine,
    "cosine": _builtin_cosine,
    "bump": _builtin_bump,
    "parabola": _builtin_parabola,
}


def sample_profile(name: str, n: int) -> np.ndarray:
    """Sample a builtin profile; endpoints are pinned bitwise equal so the
    loop-periodic identities of the exact-shift scheme hold."""
    if name not in BUILTIN_PROFILES:
        raise ValidationError(
            f"unknown profile {name!r}; builtins: {sorted(BUILTIN_PROFILES)}"
        )
    values = BUILTIN_PROFILES[name](np.linspace(0.0, 1.0, n + 1))
    values[-1] = values[0]
    return values


@dataclass(frozen=True)
class SpectrumSpec:
    rectangle: tuple[float, float, float, float]
    grid_density: float = 4.0
    tol: float = 1e-9


# search defaults cover the spectral strip relevant at delay horizon 1
DEFAULT_SPECTRUM = SpectrumSpec(rectangle=(-5.0, 2.0, -40.0, 40.0), grid_density=2.0)


@dataclass
class Scenario:
    """A parsed run file; atom and profile specs are materialized per grid."""

    graph: MetricGraph
    measure_specs: list
    functional_specs: list
    profile_spec: object
    history_spec: object
    sim: SimConfig
    snapshots: bool
    spectrum: SpectrumSpec
    mode: str
    lambda0: float

    @property
    def strict(self) -> bool:
        return self.mode == "strict"

    def measures(self, n: int | None = None):
        n = self.sim.n if n is None else n
        out = [EdgeDelayMeasure() for _ in range(self.graph.m)]
        for edge, raw_atoms, path in self.measure_specs:
            atoms = list(out[edge].atoms)
            for i, raw in enumerate(raw_atoms):
                atoms.append(_measure_atom(raw, n, f"{path}.atoms[{i}]"))
            out[edge] = EdgeDelayMeasure(tuple(atoms))
        return out

    def functionals(self, n: int | None = None):
        n = self.sim.n if n is None else n
        out = [BoundaryDelayFunctional() for _ in range(self.graph.m)]
        for edge, raw_atoms, path in self.functional_specs:
            atoms = list(out[edge].atoms)
            for i, raw in enumerate(raw_atoms):
                atoms.append(_boundary_atom(raw, n, f"{path}.atoms[{i}]"))
            out[edge] = BoundaryDelayFunctional(tuple(atoms))
        return out

    def initial(self, n: int | None = None):
        n = self.sim.n if n is None else n
        m = self.graph.m
        f = _sample_initial(self.profile_spec, m, n)
        g = _sample_history(self.history_spec, f, m, n)
        return f, g

    def make_inputs(self, n: int):
        f, g = self.initial(n)
        return self.graph, self.measures(n), self.functionals(n), f, g


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise ValidationError(f"{path}.{key}: missing")
    return obj[key]


def _measure_atom(raw: dict, n: int, path: str) -> MeasureAtom:
    theta = float(_require(raw, "theta", path))
    kind = _require(raw, "kind", path)
    value = _require(raw, "value", path)
    try:
        if kind == "scalar":
            return MeasureAtom(theta, Scalar(float(value)))
        if kind == "mult":
            profile = np.asarray(value, dtype=float)
            if profile.shape != (n + 1,):
                raise ValidationError(
                    f"{path}.value: expected {n + 1} grid values, got shape {profile.shape}"
                )
            return MeasureAtom(theta, Multiplication(profile))
        if kind == "kernel":
            matrix = np.asarray(value, dtype=float)
            if matrix.shape != (n + 1, n + 1):
                raise ValidationError(
                    f"{path}.value: expected a {n + 1}x{n + 1} kernel, got {matrix.shape}"
                )
            return MeasureAtom(theta, Kernel(matrix))
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    raise ValidationError(f"{path}.kind: {kind!r} not one of scalar|mult|kernel")


def _boundary_atom(raw: dict, n: int, path: str) -> BoundaryAtom:
    theta = float(_require(raw, "theta", path))
    weight = _require(raw, "weight", path)
    if isinstance(weight, (int, float)):
        return BoundaryAtom(theta, np.full(n + 1, float(weight)))
    profile = np.asarray(weight, dtype=float)
    if profile.shape != (n + 1,):
        raise ValidationError(
            f"{path}.weight: expected {n + 1} grid values, got shape {profile.shape}"
        )
    return BoundaryAtom(theta, profile)


def _sample_initial(spec, m: int, n: int) -> np.ndarray:
    if isinstance(spec, str):
        row = sample_profile(spec, n)
        return np.tile(row, (m, 1))
    if isinstance(spec, list) and spec and isinstance(spec[0], str):
        if len(spec) != m:
            raise ValidationError(f"initial.profile: {len(spec)} names for {m} edges")
        return np.array([sample_profile(name, n) for name in spec])
    arr = np.asarray(spec, dtype=float)
    if arr.shape != (m, n + 1):
        raise ValidationError(
            f"initial.profile: inline grid must have shape {(m, n + 1)}, got {arr.shape}"
        )
    return arr


def _sample_history(spec, f: np.ndarray, m: int, n: int) -> np.ndarray:
    if spec == "zero":
        # zero past; as a resolvent input this is the pair (f, 0), and in
        # strict simulation mode it is (deliberately) incompatible
        return np.zeros((n + 1, m, n + 1))
    if spec == "frozen":
        return np.tile(f[None], (n + 1, 1, 1))
    if spec == "traveling":
        g = np.empty((n + 1, m, n + 1))
        idx = np.arange(n + 1)
        for h in range(n + 1):
            g[h] = f[:, (idx - h) % n]
        g[0] = f
        return g
    arr = np.asarray(spec, dtype=float)
    if arr.shape != (n + 1, m, n + 1):
        raise ValidationError(
            f"initial.history: inline history must have shape {(n + 1, m, n + 1)}, "
            f"got {arr.shape}"
        )
    return arr


def parse_runfile(obj: dict) -> Scenario:
    if not isinstance(obj, dict):
        raise ValidationError("run file must be a JSON object")
    try:
        graph = graph_from_json(_require(obj, "graph", "$"))
    except ValidationError:
        raise
    except GraphFlowError as exc:
        raise ValidationError(f"graph: {exc}") from exc
    m = graph.m

    measure_specs = []
    for i, block in enumerate(obj.get("measures", [])):
        path = f"measures[{i}]"
        edge = int(_require(block, "edge", path)) - 1
        if not 0 <= edge < m:
            raise ValidationError(f"{path}.edge: {edge + 1} outside 1..{m}")
        measure_specs.append((edge, list(block.get("atoms", [])), path))

    functional_specs = []
    for i, block in enumerate(obj.get("functionals", [])):
        path = f"functionals[{i}]"
        edge = int(_require(block, "edge", path)) - 1
        if not 0 <= edge < m:
            raise ValidationError(f"{path}.edge: {edge + 1} outside 1..{m}")
        functional_specs.append((edge, list(block.get("atoms", [])), path))

    sim_block = _require(obj, "sim", "$")
    try:
        sim = SimConfig(
            n=int(_require(sim_block, "N", "sim")),
            t_final=float(_require(sim_block, "t_final", "sim")),
            output_every=int(sim_block.get("output_every", 1)),
            interpolate_delays=bool(sim_block.get("interpolate_delays", False)),
        )
    except ValidationError as exc:
        raise ValidationError(f"sim: {exc}") from exc
    snapshots = bool(sim_block.get("snapshots", False))

    initial_block = _require(obj, "initial", "$")
    profile_spec = _require(initial_block, "profile", "initial")
    history_spec = initial_block.get("history", "frozen")

    if "spectrum" in obj:
        spec_block = obj["spectrum"]
        rect = spec_block.get("rectangle", DEFAULT_SPECTRUM.rectangle)
        if len(rect) != 4:
            raise ValidationError("spectrum.rectangle: need [re_min, re_max, im_min, im_max]")
        spectrum = SpectrumSpec(
            rectangle=tuple(float(v) for v in rect),
            grid_density=float(spec_block.get("grid_density", DEFAULT_SPECTRUM.grid_density)),
            tol=float(spec_block.get("tol", DEFAULT_SPECTRUM.tol)),
        )
    else:
        spectrum = DEFAULT_SPECTRUM

    mode = obj.get("mode", "strict")
    if mode not in ("strict", "lenient"):
        raise ValidationError(f"mode: {mode!r} not one of strict|lenient")
    lambda0 = float(obj.get("check", {}).get("lambda0", 1.0))

    scenario = Scenario(
        graph=graph,
        measure_specs=measure_specs,
        functional_specs=functional_specs,
        profile_spec=profile_spec,
        history_spec=history_spec,
        sim=sim,
        snapshots=snapshots,
        spectrum=spectrum,
        mode=mode,
        lambda0=lambda0,
    )
    # materialize once at the run grid so schema errors surface at load time
    scenario.measures()
    scenario.functionals()
    scenario.initial()
    return scenario


def load_runfile(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read run file {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    return parse_runfile(obj)
