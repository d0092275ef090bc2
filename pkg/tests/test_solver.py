"""Time stepper tests.

Core claims:
    - CFL = 1 transport is an exact shift: loop runs over integer times
      return the initial state bitwise
    - column stochasticity conserves mass to roundoff on any valid graph
      once the state satisfies the discrete boundary relation
    - the evolution is a semigroup: split runs reproduce one run bitwise
    - one explicit step matches the hand-evaluated update (constant data)
    - the history ring keeps initial data below -t and computed values
      above it
    - the mass-balance ledger vanishes without delays, is exactly zero on
      configurations where the quadrature is exact, and shows second
      order per step under Richardson refinement for a P-only source
    - incompatible initial pairs raise in strict mode and are patched in
      lenient mode
"""

import numpy as np
import pytest

from graphflow._grid import grid_points
from graphflow.delay import (
    BoundaryAtom,
    BoundaryDelayFunctional,
    EdgeDelayMeasure,
    MeasureAtom,
    Scalar,
)
from graphflow.errors import IncompatibleHistory, MisalignedAtom, TimeNotOnGrid
from graphflow.graph import build_graph, loop_graph, two_cycle_graph
from graphflow.solver import SimConfig, init_state, mass, run, step

from test_graph import random_graph


def constant_inputs(m, n, value=1.0, history_value=None):
    f = np.full((m, n + 1), float(value))
    g = np.full((n + 1, m, n + 1), float(value if history_value is None else history_value))
    g[0] = f
    return f, g


def traveling_pair(n, profile):
    """Loop-compatible pair: history is the profile shifted back in time."""
    x = grid_points(n)
    f = profile(x)[None, :]
    f[0, -1] = f[0, 0]  # pin exact loop periodicity at the endpoints
    g = np.empty((n + 1, 1, n + 1))
    for h in range(n + 1):
        idx = (np.arange(n + 1) - h) % n
        g[h, 0] = f[0, idx]
    g[0] = f
    return f, g


def no_delays(m):
    return [EdgeDelayMeasure()] * m, [BoundaryDelayFunctional()] * m


class TestInitState:
    def test_compatible_constant(self):
        g = loop_graph()
        cfg = SimConfig(n=10, t_final=0.0)
        f, hist = constant_inputs(1, 10)
        state = init_state(g, f, hist, cfg)
        assert mass(state) == pytest.approx(1.0)

    def test_incompatible_strict(self):
        g = loop_graph()
        cfg = SimConfig(n=10, t_final=0.0)
        f = np.ones((1, 11))
        hist = np.zeros((11, 1, 11))
        with pytest.raises(IncompatibleHistory):
            init_state(g, f, hist, cfg, strict=True)

    def test_incompatible_lenient_overwrites(self):
        g = loop_graph()
        cfg = SimConfig(n=10, t_final=0.0)
        f = np.ones((1, 11))
        hist = np.zeros((11, 1, 11))
        state = init_state(g, f, hist, cfg, strict=False)
        assert np.array_equal(state.history.snapshot(0), f)
        assert np.all(state.history.snapshot(1) == 0.0)

    def test_traveling_wave_compatible(self):
        g = loop_graph()
        n = 16
        cfg = SimConfig(n=n, t_final=0.0)
        f, hist = traveling_pair(n, lambda x: np.sin(2 * np.pi * x))
        state = init_state(g, f, hist, cfg, strict=True)
        assert np.array_equal(state.u, f)


class TestStep:
    def test_loop_period_is_bitwise(self):
        g = loop_graph()
        n = 32
        cfg = SimConfig(n=n, t_final=0.0)
        rng = np.random.default_rng(1)
        values = rng.normal(size=n + 1)
        values[-1] = values[0]  # loop-periodic profile
        f = values[None, :]
        hist = np.tile(f, (n + 1, 1, 1))
        state = init_state(g, f, hist, cfg)
        ms, fs = no_delays(1)
        for _ in range(n):
            state = step(state, g, ms, fs, cfg)
        assert state.u.tobytes() == f.tobytes()

    def test_step_does_not_mutate_input(self):
        g = loop_graph()
        cfg = SimConfig(n=8, t_final=0.0)
        f, hist = constant_inputs(1, 8)
        state = init_state(g, f, hist, cfg)
        before = state.u.copy()
        ms = [EdgeDelayMeasure((MeasureAtom(-1.0, Scalar(2.0)),))]
        step(state, g, ms, no_delays(1)[1], cfg)
        assert np.array_equal(state.u, before)
        assert state.step_index == 0

    def test_mass_conserved_each_step(self):
        rng = np.random.default_rng(9)
        g = random_graph(rng, n_vertices=3, extra_edges=2)
        n = 24
        cfg = SimConfig(n=n, t_final=0.0)
        x = grid_points(n)
        f = np.array([np.cos(2 * np.pi * x * (j + 1)) + 2 for j in range(g.m)])
        f[:, -1] = g.B @ f[:, 0]  # discrete boundary relation at t = 0
        hist = np.tile(f[None], (n + 1, 1, 1))
        state = init_state(g, f, hist, cfg)
        ms, fs = no_delays(g.m)
        m0 = mass(state)
        for _ in range(50):
            state = step(state, g, ms, fs, cfg)
            assert mass(state) == pytest.approx(m0, abs=1e-13 * 50)

    def test_delay_source_hand_step(self):
        # u grows by a*dt per step while everything is constant
        g = loop_graph()
        n = 20
        cfg = SimConfig(n=n, t_final=0.0)
        f, hist = constant_inputs(1, n)
        state = init_state(g, f, hist, cfg)
        a = 0.7
        ms = [EdgeDelayMeasure((MeasureAtom(-1.0, Scalar(a)),))]
        state = step(state, g, ms, no_delays(1)[1], cfg)
        assert np.allclose(state.u, 1.0 + a / n, atol=0)


class TestRun:
    def test_traveling_wave_two_periods(self):
        g = loop_graph()
        n = 50
        f, hist = traveling_pair(n, lambda x: np.sin(2 * np.pi * x))
        cfg = SimConfig(n=n, t_final=2.0)
        ms, fs = no_delays(1)
        report = run(g, ms, fs, cfg, f=f, g=hist)
        assert report.final_state.u.tobytes() == f.tobytes()
        assert np.abs(report.mass - report.mass[0]).max() <= 1e-13 * len(report.times)

    def test_semigroup_law_bitwise(self):
        g = loop_graph()
        n = 8
        x = grid_points(n)
        f = (np.sin(2 * np.pi * x) + 2.0)[None, :]
        hist = np.array([f * np.exp(-h / n) for h in range(n + 1)])
        hist[0] = f
        ms = [EdgeDelayMeasure((MeasureAtom(-0.5, Scalar(0.3)),))]
        fs = [BoundaryDelayFunctional((BoundaryAtom(-0.25, np.full(n + 1, 0.2)),))]
        whole = run(g, ms, fs, SimConfig(n=n, t_final=2.5), f=f, g=hist, strict=False)
        first = run(g, ms, fs, SimConfig(n=n, t_final=1.25), f=f, g=hist, strict=False)
        second = run(g, ms, fs, SimConfig(n=n, t_final=1.25), start_state=first.final_state)
        assert second.final_state.u.tobytes() == whole.final_state.u.tobytes()
        a = second.final_state.history.snapshots_oldest_last()
        b = whole.final_state.history.snapshots_oldest_last()
        assert a.tobytes() == b.tobytes()

    def test_two_cycle_swap_and_mass(self):
        g = two_cycle_graph()
        n = 16
        f = np.zeros((2, n + 1))
        f[0] = 1.0
        hist = np.tile(f[None], (n + 1, 1, 1))
        ms, fs = no_delays(2)
        report = run(g, ms, fs, SimConfig(n=n, t_final=1.0), f=f, g=hist)
        assert np.abs(report.mass - 1.0).max() <= 1e-13 * len(report.times)
        # profiles swap between the edges; node 0 carries the jump trace
        final = report.final_state.u
        assert np.array_equal(final[0, 1:], f[1, 1:])
        assert np.array_equal(final[1, 1:], f[0, 1:])

    def test_history_keeps_initial_data_below_minus_t(self):
        g = loop_graph()
        n = 10
        f = np.ones((1, n + 1))
        hist = np.full((n + 1, 1, n + 1), 7.0)
        ms, fs = no_delays(1)
        report = run(g, ms, fs, SimConfig(n=n, t_final=0.5), f=f, g=hist, strict=False)
        h_state = report.final_state.history
        # offsets deeper than t = 0.5 still show the initial history
        for h in range(6, n + 1):
            assert np.all(h_state.snapshot(h) == 7.0)
        for h in range(0, 5):
            assert np.all(h_state.snapshot(h) == 1.0)
        # after t >= 1 every slot is a computed value
        report2 = run(g, ms, fs, SimConfig(n=n, t_final=0.5),
                      start_state=report.final_state)
        buf = report2.final_state.history.snapshots_oldest_last()
        assert np.all(buf == 1.0)

    def test_off_grid_t_final(self):
        g = loop_graph()
        f, hist = constant_inputs(1, 10)
        ms, fs = no_delays(1)
        with pytest.raises(TimeNotOnGrid):
            run(g, ms, fs, SimConfig(n=10, t_final=0.15), f=f, g=hist)

    def test_boundary_residual_post_step(self):
        g = loop_graph()
        n = 20
        f = (grid_points(n) ** 2)[None, :]  # f(1) != f(0): incompatible start
        hist = np.tile(f[None], (n + 1, 1, 1))
        ms = [EdgeDelayMeasure((MeasureAtom(-0.5, Scalar(0.4)),))]
        fs = [BoundaryDelayFunctional((BoundaryAtom(-0.5, np.ones(n + 1)),))]
        report = run(g, ms, fs, SimConfig(n=n, t_final=1.0), f=f, g=hist)
        assert report.boundary_residual[0] > 0.1
        assert report.boundary_residual[1:].max() <= 1e-12

    def test_off_grid_atom_with_interpolation(self):
        # theta = -0.35 is off-grid at N = 10; interpolation of the
        # theta-linear history makes one source step exact
        g = loop_graph()
        n = 10
        f = np.ones((1, n + 1))
        hist = np.empty((n + 1, 1, n + 1))
        for h in range(n + 1):
            hist[h] = 1.0 + 3.0 * (-h / n)
        ms = [EdgeDelayMeasure((MeasureAtom(-0.35, Scalar(1.0)),))]
        fs = no_delays(1)[1]
        with pytest.raises(MisalignedAtom):
            run(g, ms, fs, SimConfig(n=n, t_final=0.1), f=f, g=hist)
        cfg = SimConfig(n=n, t_final=0.1, interpolate_delays=True)
        report = run(g, ms, fs, cfg, f=f, g=hist)
        expected = 1.0 + (1.0 + 3.0 * (-0.35)) / n
        assert np.allclose(report.final_state.u, expected, atol=1e-14)

    def test_positive_configuration_stays_nonnegative(self):
        rng = np.random.default_rng(23)
        g = random_graph(rng, n_vertices=2, extra_edges=1)
        n = 16
        f = rng.uniform(0.0, 1.0, size=(g.m, n + 1))
        hist = rng.uniform(0.0, 1.0, size=(n + 1, g.m, n + 1))
        ms = [
            EdgeDelayMeasure((MeasureAtom(-0.25, Scalar(0.5)),), positive=True)
            for _ in range(g.m)
        ]
        fs = [
            BoundaryDelayFunctional(
                (BoundaryAtom(-0.5, rng.uniform(0, 1, n + 1)),), positive=True
            )
            for _ in range(g.m)
        ]
        report = run(g, ms, fs, SimConfig(n=n, t_final=3.0), f=f, g=hist, strict=False)
        assert report.min_value.min() >= -1e-12


class TestMass:
    def test_constant(self):
        assert mass(np.ones((3, 11))) == pytest.approx(3.0)

    def test_zero(self):
        assert mass(np.zeros((2, 5))) == 0.0

    def test_linear_exact(self):
        n = 13
        u = grid_points(n)[None, :]
        assert mass(u) == pytest.approx(0.5, abs=1e-15)


class TestMassBalanceLedger:
    def test_no_delays_zero(self):
        g = loop_graph()
        n = 25
        f, hist = traveling_pair(n, lambda x: np.sin(2 * np.pi * x) + 1.5)
        ms, fs = no_delays(1)
        report = run(g, ms, fs, SimConfig(n=n, t_final=2.0), f=f, g=hist)
        assert np.abs(report.mass_balance_residual).max() <= 1e-13

    def test_boundary_only_constant_data_exact(self):
        # f(x) = x, unit weight at -0.5, constant history: the boundary
        # relation holds at t = 0 and the quadrature is exact, so the
        # ledger closes to roundoff while the atom reads constant data.
        g = loop_graph()
        n = 20
        f = grid_points(n)[None, :]
        hist = np.ones((n + 1, 1, n + 1))
        fs = [BoundaryDelayFunctional((BoundaryAtom(-0.5, np.ones(n + 1)),))]
        ms = [EdgeDelayMeasure()]
        report = run(g, ms, fs, SimConfig(n=n, t_final=0.4), f=f, g=hist, strict=False)
        assert np.abs(report.mass_balance_residual).max() <= 1e-12

    def test_p_only_second_order_per_step(self):
        # per-step residual is O(dt^2): halving dt divides the maximum by ~4
        def max_residual(n):
            g = loop_graph()
            x = grid_points(n)
            f = (np.sin(2 * np.pi * x) + 2.0)[None, :]
            hist = np.empty((n + 1, 1, n + 1))
            for h in range(n + 1):
                theta = -h / n
                hist[h, 0] = f[0] * np.exp(theta) + theta * x
            hist[0] = f
            ms = [EdgeDelayMeasure((MeasureAtom(-0.5, Scalar(0.8)),))]
            fs = [BoundaryDelayFunctional()]
            report = run(g, ms, fs, SimConfig(n=n, t_final=0.4), f=f, g=hist)
            return np.abs(report.mass_balance_residual).max()

        r1, r2 = max_residual(20), max_residual(40)
        assert r1 / r2 == pytest.approx(4.0, rel=0.2)
