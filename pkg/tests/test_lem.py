import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sapt_lem.errors import ConfigError, NumericalOverflow, UnknownKind
from sapt_lem.lem import (GridTopography, LemConfig, ParameterVector, default_sites,
                          flow_route, make_synthetic_problem, simulate, step)

ZERO = ParameterVector(rainfall=0.0, erodibility=5e-6, m_exponent=0.5, n_exponent=1.0,
                       c_marine=0.0, c_surface=0.0, uplift=0.0)


def brute_force_flow(z):
    """Receivers by exhaustive neighbour search, areas by walking every
    cell's path downstream and crediting each visited cell."""
    nr, nc = z.shape
    rcv = np.arange(z.size)
    for r in range(nr):
        for c in range(nc):
            nbrs = [(z[rr, cc], rr * nc + cc)
                    for rr in range(r - 1, r + 2) for cc in range(c - 1, c + 2)
                    if (rr, cc) != (r, c) and 0 <= rr < nr and 0 <= cc < nc]
            low, idx = min(nbrs)
            if low < z[r, c]:
                rcv[r * nc + c] = idx
    area = np.zeros(z.size)
    for start in range(z.size):
        i = start
        area[i] += 1
        while rcv[i] != i:
            i = rcv[i]
            area[i] += 1
    return rcv.reshape(z.shape), area.reshape(z.shape)


class TestGridTopography:
    def test_rejects_small_or_bad_grids(self):
        with pytest.raises(ConfigError):
            GridTopography(np.zeros((1, 5)))
        with pytest.raises(ConfigError):
            GridTopography(np.array([[0.0, np.nan], [0.0, 0.0]]))
        with pytest.raises(ConfigError):
            GridTopography(np.zeros((3, 3)), cell_size=0.0)

    def test_copy_is_independent(self):
        g = GridTopography(np.zeros((3, 3)))
        h = g.copy()
        h.elevation[1, 1] = 5.0
        assert g.elevation[1, 1] == 0.0


class TestFlowRoute:
    def test_flat_grid_self_receivers(self):
        topo = GridTopography(np.full((5, 6), 3.0), cell_size=10.0)
        flow = flow_route(topo)
        assert np.array_equal(flow.receivers.ravel(), np.arange(30))
        assert np.all(flow.area == 100.0)

    def test_ramp_accumulates(self):
        flow = flow_route(np.array([[4.0, 3.0, 2.0, 1.0]]), cell_size=1.0)
        assert flow.area.ravel().tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_pit_collects_all_neighbours(self):
        z = np.full((3, 3), 10.0)
        z[1, 1] = 0.0
        flow = flow_route(GridTopography(z, cell_size=2.0))
        assert flow.area[1, 1] == 9 * 4.0
        assert np.all(flow.receivers.ravel()[[0, 1, 2, 3, 5, 6, 7, 8]] == 4)

    def test_diagonal_distance(self):
        z = np.full((3, 3), 10.0)
        z[2, 2] = 0.0
        flow = flow_route(GridTopography(z, cell_size=3.0))
        assert flow.distance[1, 1] == pytest.approx(3.0 * np.sqrt(2.0))
        assert flow.distance[2, 2] == 0.0

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 7), st.integers(2, 7)),
                  elements=st.floats(0, 100, allow_nan=False), unique=True))
    def test_matches_brute_force(self, z):
        flow = flow_route(z, cell_size=1.0)
        rcv, area = brute_force_flow(z)
        assert np.array_equal(flow.receivers, rcv)
        assert np.array_equal(flow.area, area)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(2, 8)),
                  elements=st.floats(-50, 50, allow_nan=False)))
    def test_area_conservation(self, z):
        # every cell drains to exactly one outlet, so outlet areas sum to the total
        flow = flow_route(z, cell_size=1.0)
        outlets = flow.receivers.ravel() == np.arange(z.size)
        assert flow.area.ravel()[outlets].sum() == z.size
        assert np.all(flow.area >= 1.0)


class TestStep:
    def test_no_processes_is_identity(self):
        rng = np.random.default_rng(1)
        topo = GridTopography(rng.uniform(0, 100, (6, 7)), cell_size=100.0)
        out = step(topo, ZERO, 1000.0)
        assert np.array_equal(out.elevation, topo.elevation)

    def test_uplift_unit_conversion(self):
        topo = GridTopography(np.zeros((5, 5)), cell_size=100.0)
        p = ParameterVector(rainfall=0.0, erodibility=0.0, m_exponent=0.5, n_exponent=1.0, uplift=1.0)
        z = step(topo, p, 1000.0).elevation
        assert np.all(z[1:-1, 1:-1] == 1.0)
        assert np.all(z[0] == 0.0) and np.all(z[:, -1] == 0.0)

    def test_erosion_never_undercuts_receiver(self):
        rng = np.random.default_rng(3)
        z0 = rng.uniform(0, 50, (8, 8))
        topo = GridTopography(z0, cell_size=10.0)
        p = ParameterVector(rainfall=3.0, erodibility=1e-2, m_exponent=1.0, n_exponent=1.0)
        flow = flow_route(topo)
        z1 = step(topo, p, 1000.0).elevation
        rcv = flow.receivers.ravel()
        assert np.all(z1.ravel() >= z0.ravel()[rcv] - 1e-12)
        assert np.all(z1 <= z0 + 1e-12)

    def test_single_cell_stream_power(self):
        # one interior cell above a lower neighbour: hand-computed incision
        z = np.full((3, 3), 100.0)
        z[1, 1] = 101.0
        z[1, 2] = 90.0
        p = ParameterVector(rainfall=2.0, erodibility=1e-7, m_exponent=0.5, n_exponent=1.5)
        dx, dt = 10.0, 10.0
        out = step(GridTopography(z, cell_size=dx), p, dt).elevation
        area = dx * dx  # nothing drains into the raised centre
        slope = 11.0 / dx
        expected = 101.0 - 1e-7 * (2.0 * area) ** 0.5 * slope ** 1.5 * dt
        assert out[1, 1] == pytest.approx(expected, rel=1e-12)

    def test_diffusion_conserves_mass_in_interior(self):
        # a bump far from the edges only spreads; total volume is unchanged
        z = np.zeros((11, 11))
        z[5, 5] = 10.0
        p = ParameterVector(rainfall=0.0, erodibility=0.0, m_exponent=0.5, n_exponent=1.0,
                            c_marine=0.0, c_surface=1.0)
        out = step(GridTopography(z, cell_size=10.0, sea_level=-1.0), p, 10.0).elevation
        assert out.sum() == pytest.approx(10.0, rel=1e-12)
        assert out[5, 5] == pytest.approx(10.0 - 4 * 0.1 * 10.0)
        assert out[4, 5] == pytest.approx(1.0)

    def test_marine_coefficient_below_sea_level(self):
        z = np.zeros((5, 5))
        z[2, 2] = -10.0
        p = ParameterVector(rainfall=0.0, erodibility=0.0, m_exponent=0.5, n_exponent=1.0,
                            c_marine=0.5, c_surface=0.0)
        out = step(GridTopography(z, cell_size=1.0), p, 0.1).elevation
        assert out[2, 2] == pytest.approx(-10.0 + 0.5 * 0.1 * 40.0)
        # cells at sea level use the (zero) surface coefficient
        assert out[1, 2] == 0.0

    def test_overflow(self):
        z = np.zeros((5, 5))
        z[2, 2] = 1e300
        p = ParameterVector(rainfall=0.0, erodibility=0.0, m_exponent=0.5, n_exponent=1.0,
                            c_marine=0.0, c_surface=1e10)
        with pytest.raises(NumericalOverflow):
            step(GridTopography(z, cell_size=1.0), p, 1e10)

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ConfigError):
            step(GridTopography(np.zeros((3, 3))), ZERO, 0.0)


class TestSimulate:
    def test_zero_duration(self):
        topo = GridTopography(np.ones((6, 6)))
        cfg = LemConfig(duration=0.0, sediment_sites=[(2, 2)])
        out = simulate(topo, ZERO, cfg)
        assert np.array_equal(out.final_topography.elevation, topo.elevation)
        assert np.all(out.sediment == 0.0)

    def test_matches_repeated_steps(self):
        rng = np.random.default_rng(5)
        topo = GridTopography(rng.uniform(0, 200, (9, 9)), cell_size=500.0)
        p = ParameterVector(rainfall=1.2, erodibility=4e-6, m_exponent=0.6, n_exponent=1.1,
                            c_marine=0.4, c_surface=0.9, uplift=0.7)
        cfg = LemConfig(duration=20000.0, time_step=1000.0, n_checkpoints=4,
                        sediment_sites=[(2, 3), (4, 4)])
        out = simulate(topo, p, cfg)
        z = topo
        records = []
        for s in range(1, 21):
            z = step(z, p, 1000.0)
            if s % 5 == 0:
                base = topo.elevation + 0.7e-3 * 1000.0 * s
                records.append([z.elevation[r, c] - base[r, c] for r, c in cfg.sediment_sites])
        assert np.allclose(out.final_topography.elevation, z.elevation, rtol=0, atol=1e-9)
        assert np.allclose(out.sediment, np.array(records).T, rtol=0, atol=1e-9)

    def test_checkpoint_times(self):
        cfg = LemConfig(duration=1.0e6, time_step=2000.0, n_checkpoints=4, sediment_sites=[(1, 1)])
        assert cfg.checkpoint_times.tolist() == [250000.0, 500000.0, 750000.0, 1000000.0]

    @pytest.mark.parametrize("cfg", [
        dict(duration=1000.0, time_step=300.0),
        dict(time_step=-1.0),
        dict(sediment_sites=[]),
        dict(sediment_sites=[(50, 1)]),
    ])
    def test_invalid_config(self, cfg):
        cfg = {"sediment_sites": [(1, 1)], **cfg}
        with pytest.raises(ConfigError):
            simulate(GridTopography(np.zeros((4, 4))), ZERO, LemConfig(**cfg))


class TestSyntheticProblems:
    def test_mountain_parameters(self):
        p = make_synthetic_problem("mountain", 16, seed=7)
        assert p.names == ("rainfall", "erodibility", "m_exponent", "n_exponent", "uplift")
        assert p.true_parameters.to_dict() == dict(rainfall=1.5, erodibility=5e-6, m_exponent=0.5,
                                                   n_exponent=1.0, uplift=1.0)
        assert p.prior_bounds.to_dict()["uplift"] == [0.1, 1.7]

    def test_margin_parameters(self):
        p = make_synthetic_problem("margin", 16, seed=0)
        assert p.names == ("rainfall", "erodibility", "m_exponent", "n_exponent", "c_marine", "c_surface")
        b = p.prior_bounds.to_dict()
        assert b["c_marine"] == [0.3, 0.7] and b["c_surface"] == [0.6, 1.0]
        z = p.initial_topography.elevation
        assert z.min() < 0.0 < z.max()

    @pytest.mark.parametrize("kind", ["mountain", "margin"])
    def test_ground_truth_is_exact_simulation(self, kind):
        p = make_synthetic_problem(kind, 12, seed=3)
        out = simulate(p.initial_topography, p.true_parameters, p.lem_config)
        assert np.array_equal(out.final_topography.elevation, p.ground_truth.final_topography.elevation)
        assert np.array_equal(out.sediment, p.ground_truth.sediment)
        lo, hi = p.prior_bounds.lower, p.prior_bounds.upper
        assert np.all(lo < hi)
        t = p.true_parameters.to_array()
        assert np.all((lo <= t) & (t <= hi))

    def test_mountain_regression_baseline(self):
        # pinned summary of the 32x32 mountain truth, guards the forward model against drift
        p = make_synthetic_problem("mountain", 32, seed=0)
        z = p.ground_truth.final_topography.elevation
        assert z.min() == 0.0
        assert z.max() == pytest.approx(919.9451627385532, rel=1e-9)
        assert z.mean() == pytest.approx(368.8679725983094, rel=1e-9)

    def test_errors(self):
        with pytest.raises(UnknownKind):
            make_synthetic_problem("volcano")
        with pytest.raises(ConfigError):
            make_synthetic_problem("mountain", 4)

    def test_default_sites_interior(self):
        sites = default_sites((32, 32), 10)
        assert len(sites) == 10
        assert all(1 <= r <= 30 and r == c for r, c in sites)
