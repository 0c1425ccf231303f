import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from transport_noise.config import RunConfig
from transport_noise.dynamics import ConfigError, SimConfig, ThetaSpec, make_driver
from transport_noise.experiments import (
    Stats,
    bound_constant,
    coefficient_norm,
    energy_defect,
    energy_defect_study,
    exp_anomalous,
    exp_gradient_gap,
    exp_qtheta_limit,
    exp_scaling_limit,
    exp_uniform_sobolev,
    initial_field,
    qtheta_grid_size,
    run_ensemble,
    shear_mode,
)
from transport_noise.noise import theta_canonical
from transport_noise.spectral import divergence, from_modes


def tiny(**sections) -> RunConfig:
    data = {
        "grid": {"N": 16},
        "physics": {"T": 0.05, "dt": 1e-3, "mu": 0.5, "kappa": 0.05},
        "noise": {"n": 1, "n_list": [1, 2]},
        "ensemble": {"paths": 4, "batch": 2, "workers": 1},
        "experiment": {"kappas": [0.05]},
    }
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return RunConfig.model_validate(data)


class TestStats:
    def test_known_sample(self):
        s = Stats.of([1.0, 2.0, 3.0, 4.0])
        assert s.mean == 2.5 and s.median == 2.5
        assert s.std == pytest.approx(math.sqrt(5.0 / 3.0))
        assert s.half_width == pytest.approx(1.959963984540054 * math.sqrt(5.0 / 3.0) / 2.0)
        assert s.ci_low == pytest.approx(2.5 - s.half_width)
        assert (s.min, s.max, s.q25, s.q75) == (1.0, 4.0, 1.75, 3.25)

    def test_single_sample_has_no_interval(self):
        s = Stats.of([0.3])
        assert s.samples == 1 and s.std is None and s.ci_low is None and s.half_width is None

    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30))
    def test_order(self, xs):
        s = Stats.of(xs)
        assert s.min <= s.q25 <= s.median <= s.q75 <= s.max
        assert s.ci_low <= s.mean <= s.ci_high


class TestConstants:
    def test_bound_constant_value(self):
        # half of 1 - exp(-mu / (4 pi^2)) at mu = 0.5 for a unit-energy datum
        assert 0.5 * bound_constant(0.5) == pytest.approx(0.00629, abs=5e-6)
        assert bound_constant(0.0) == 0.0
        assert bound_constant(0.5, "velocity") < bound_constant(0.5)

    def test_coefficient_norm_shell_sum(self):
        theta = theta_canonical(2, 4, 1.0)
        k2 = np.sum(theta.kvecs.astype(float) ** 2, axis=1)
        direct = 0.0
        for t, q in zip(theta.values, k2):
            direct += t * t * math.sqrt(1.0 + 4.0 * math.pi**2 * q)
        assert coefficient_norm(2, 4, 1.0, 0.5) == pytest.approx(math.sqrt(direct), rel=1e-14)

    def test_coefficient_norm_grows(self):
        values = [coefficient_norm(2, n, 1.0, 0.5) for n in (1, 2, 4, 8, 16, 32)]
        assert all(b > a for a, b in zip(values, values[1:]))
        assert values[-1] > 4 * values[0]

    def test_coefficient_norm_l2_is_flat(self):
        # at s = 0 only the normalisation survives, so growth comes from the Sobolev weight
        values = [coefficient_norm(2, n, 1.0, 0.0) for n in (1, 4, 16)]
        np.testing.assert_allclose(values, values[0], rtol=1e-12)


class TestInitialField:
    def test_normalised(self):
        f = initial_field(tiny(experiment={"initial": [[1, 0, 3.0, 0.0], [0, 2, 0.0, 1.0]]}))
        assert f.l2_sq() == pytest.approx(1.0, rel=1e-14)
        assert f.mean() == 0.0

    def test_unnormalised(self):
        # coefficient 1 at (1,0) plus its conjugate is 2 cos(2 pi x)
        f = initial_field(tiny(experiment={"initial_l2_sq": None}))
        assert f.l2_sq() == pytest.approx(2.0)

    def test_velocity_is_divergence_free(self):
        u = initial_field(tiny(physics={"equation": "velocity"}, experiment={"initial": [[1, 1, 1.0, 0.0]]}))
        assert u.rank == "vector"
        assert divergence(u).l2_sq() < 1e-28

    def test_bad_row(self):
        with pytest.raises(ConfigError, match="experiment.initial"):
            initial_field(tiny(experiment={"initial": [[1, 0, 1.0]]}))


class TestEnsemble:
    def test_ordered_reduction_is_worker_independent(self):
        cfg = tiny().sim(paths=6, batch=2)
        f = initial_field(tiny())
        a = run_ensemble(cfg, f, workers=1)
        b = run_ensemble(cfg, f, workers=2)
        np.testing.assert_array_equal(a.dissipation, b.dissipation)
        for key in a.mean_series:
            np.testing.assert_array_equal(a.mean_series[key], b.mean_series[key])

    def test_batching_does_not_change_paths(self):
        f = initial_field(tiny())
        a = run_ensemble(tiny().sim(paths=4, batch=1), f)
        b = run_ensemble(tiny().sim(paths=4, batch=4), f)
        np.testing.assert_array_equal(a.dissipation, b.dissipation)


class TestAnomalous:
    def test_report_structure_and_energy_bound(self):
        run = tiny()
        r = exp_anomalous(run, "scalar")
        (e,) = r.entries
        assert r.seed == run.ensemble.seed and r.config == run.model_dump(mode="json")
        assert e.dissipation.samples == 4
        assert e.dissipation.mean <= 0.5 * r.initial_l2_sq + e.dissipation.half_width
        assert e.energy_bound_ok
        assert e.prediction == pytest.approx(0.5 * (1 - e.limit_energy_ratio))
        assert r.stated_decay_factor == pytest.approx(math.exp(-0.5 / (4 * math.pi**2)))
        assert "design choice" in r.schedule

    def test_zero_datum_is_vacuous_pass(self):
        r = exp_anomalous(tiny(experiment={"initial": [[1, 0, 0.0, 0.0]]}), "scalar")
        (e,) = r.entries
        assert e.dissipation.mean == 0.0 and e.prediction == 0.0
        assert r.passed

    def test_vorticity_unidirectional(self):
        r = exp_anomalous(tiny(), "vorticity")
        assert r.equation == "vorticity"
        assert r.entries[0].dissipation.mean <= 0.5 + 1e-12

    def test_velocity_runs(self):
        r = exp_anomalous(tiny(experiment={"initial": [[1, 1, 1.0, 0.0]]}), "velocity")
        assert r.entries[0].dissipation.mean > 0
        assert r.bound_constant == pytest.approx(1 - math.exp(-0.5 / (16 * math.pi**2)))

    def test_small_noise_recovers_molecular_dissipation(self):
        run = tiny(physics={"mu": 1e-6, "T": 1.0}, experiment={"initial": [[1, 0, 1.0, 0.0]]})
        (e,) = exp_anomalous(run, "scalar").entries
        assert e.dissipation.mean == pytest.approx(0.5 * (1 - math.exp(-8 * math.pi**2 * 0.05)), rel=1e-4)

    def test_two_mode_vorticity_oracle(self):
        # the prediction comes from the deterministic solver, here checked against a finer step
        run = tiny(physics={"dt": 1e-3}, experiment={"initial": [[1, 0, 1.0, 0.0], [0, 2, 0.5, 0.0]]})
        r = exp_anomalous(run, "vorticity")
        fine = exp_anomalous(run.with_updates("physics", dt=2.5e-4), "vorticity")
        assert r.entries[0].prediction == pytest.approx(fine.entries[0].prediction, rel=1e-3)

    def test_schedule_respects_capacity(self):
        r = exp_anomalous(tiny(experiment={"kappas": [1e-4]}), "scalar")
        assert 2 * r.entries[0].n + 1 < 8


class TestScalingLimit:
    def test_rows_and_baseline(self):
        t = exp_scaling_limit(tiny())
        assert [r.n for r in t.rows] == [0, 1, 2]
        assert t.rows[0].samples == 1
        assert all(r.samples == 4 for r in t.rows[1:])
        assert set(t.checks) == {"median_strictly_decreasing", "final_below_threshold"}

    def test_single_path_smoke(self):
        t = exp_scaling_limit(tiny(experiment={"baseline": False}), paths=1)
        assert len(t.rows) == 2 and all(r.samples == 1 for r in t.rows)

    def test_early_exit_matches_full_sup(self):
        a = exp_scaling_limit(tiny(experiment={"settle_sup": True}))
        b = exp_scaling_limit(tiny(experiment={"settle_sup": False}))
        for ra, rb in zip(a.rows, b.rows):
            assert ra.sup_distance.median == pytest.approx(rb.sup_distance.median, rel=1e-13)


class TestGradientGap:
    def test_rows(self):
        t = exp_gradient_gap(tiny(), [2])
        (row,) = t.rows
        assert row.molecular.mean > 0
        assert t.summary["limit_molecular_dissipation"] == pytest.approx(
            t.summary["limit_total_dissipation"] * 0.05 / 0.55
        )

    def test_needs_scalar(self):
        with pytest.raises(ConfigError):
            exp_gradient_gap(tiny(physics={"equation": "vorticity"}))


class TestQTheta:
    def test_shear_mode(self):
        u = shear_mode(32, (1, 1))
        assert divergence(u).l2_sq() < 1e-30
        assert u.l2_sq() == pytest.approx(0.5)

    def test_grid_size(self):
        assert qtheta_grid_size((1, 1), 16) == 128
        assert qtheta_grid_size((1, 1), 2) == 16

    def test_zero_phi(self):
        t = exp_qtheta_limit([2, 4], (1, 1), 0.5, amplitude=0.0)
        assert all(r.residual_plus == 0.0 and r.residual_minus == 0.0 for r in t.rows)
        assert t.summary["nu_effective"] is None
        assert not t.passed

    def test_small_family(self):
        t = exp_qtheta_limit([2, 4, 8], (1, 1), 0.5, T=0.01)
        assert t.summary["winning_sign"] == -1
        minus = [r.residual_minus for r in t.rows]
        assert all(b < a for a, b in zip(minus, minus[1:]))


class TestUniformSobolev:
    def test_r0_zero_is_initial_energy(self):
        t = exp_uniform_sobolev(tiny(), [1, 2], r0=0.0)
        for row in t.rows:
            assert row.hs_sup.mean == pytest.approx(1.0, rel=1e-12)
            assert row.hs_sup.std == pytest.approx(0.0, abs=1e-12)

    def test_coefficient_column(self):
        t = exp_uniform_sobolev(tiny(), [1, 2])
        assert t.checks["coefficient_norm_increasing"]
        assert t.rows[0].coefficient_norm == pytest.approx(coefficient_norm(2, 1, 1.0, 0.5))


class TestEnergyDefect:
    def test_left_point_rule(self):
        l2 = np.array([1.0, 0.8, 0.7])
        grad = np.array([10.0, 5.0, 99.0])
        # 0.35 + 0.1 * 0.2 * 15 - 0.5
        assert energy_defect(l2, grad, 0.1, 0.2) == pytest.approx(0.15)

    def test_first_order_on_short_horizon(self):
        cfg = SimConfig(N=32, theta=ThetaSpec(n=2), kappa=0.05, mu=0.1, T=0.1, dt=4e-4)
        f = from_modes(2, 32, 1, [((1, 0), 0.5), ((1, 1), 0.25j)])
        s = energy_defect_study(cfg, f, [4e-4, 2e-4, 1e-4])
        assert s.dts == [4e-4, 2e-4, 1e-4]
        assert all(1.7 <= r <= 2.3 for r in s.ratios)
        assert s.passed

    def test_substeps_share_the_path(self):
        coarse = make_driver(SimConfig(N=16, theta=ThetaSpec(n=1), T=0.004, dt=2e-3, substeps=2, seed=3), 1)
        fine = make_driver(SimConfig(N=16, theta=ThetaSpec(n=1), T=0.004, dt=1e-3, seed=3), 1)
        for _ in range(2):
            np.testing.assert_allclose(coarse.next(), fine.next() + fine.next(), rtol=1e-14)

    def test_dt_must_nest(self):
        cfg = SimConfig(N=16, theta=ThetaSpec(n=1), T=0.012, dt=3e-3)
        with pytest.raises(ConfigError):
            energy_defect_study(cfg, from_modes(2, 16, 1, [((1, 0), 0.5)]), [3e-3, 2e-3])
