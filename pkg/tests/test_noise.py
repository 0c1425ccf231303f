import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from transport_noise.noise import (
    BrownianDriver,
    NoiseError,
    TransportOperator,
    apply_transport_noise,
    basis_for,
    build_basis,
    c_d,
    channels,
    empty_theta,
    is_positive,
    isotropy_defect,
    isotropy_matrix,
    lattice_shell,
    n_channels,
    padded_length,
    perp_basis,
    q_theta,
    q_theta_symbol_at,
    quadratic_variation,
    stratonovich_corrector,
    theta_canonical,
    theta_explicit,
    transfer_weights,
)
from transport_noise.spectral import Grid, SpectralField, biot_savart, from_modes, laplacian

from test_spectral import random_field

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def interior_field(N, seed, reach, d=2):
    """Random field whose modes stay on the grid after shifts of size ``reach``."""
    return random_field(N, seed, kmax=N // 2 - 1 - reach, d=d)


def random_radial_theta(d, shells, seed):
    """Normalized, radially symmetric theta with random values per complete shell."""
    rng = np.random.default_rng(seed)
    table = {}
    for r2 in shells:
        v = float(rng.uniform(0.1, 1.0))
        for k in lattice_shell(d, r2):
            table[k] = v
    return theta_explicit(d, table)


# ---- dictionary-based Fourier oracle for Q_theta (independent of grid code) ----


def _modes_of(u: SpectralField):
    full = u.grid.to_full(u.coeffs)
    freqs = np.fft.fftfreq(u.N, 1.0 / u.N).round().astype(int)
    out = {}
    for i, j in zip(*np.nonzero(np.abs(full).max(axis=0) > 0)):
        out[(int(freqs[i]), int(freqs[j]))] = full[:, i, j].copy()
    return out


def _project(modes, keep_gradient):
    out = {}
    for k, v in modes.items():
        kk = np.array(k, dtype=float)
        k2 = kk @ kk
        grad = kk * (kk @ v) / k2 if k2 > 0 else np.zeros_like(v)
        out[k] = grad if keep_gradient else v - grad
    return out


def q_oracle(theta, basis, u, mu):
    u_modes = _modes_of(u)
    acc = {}
    for k0, th in zip(theta.kvecs, theta.values):
        for a in basis.frame(k0):
            first = {}
            for k, v in u_modes.items():
                m = (k[0] + k0[0], k[1] + k0[1])
                first[m] = first.get(m, 0) + 2j * np.pi * (a @ np.array(k)) * v
            grad_part = _project(first, keep_gradient=True)
            for m, v in grad_part.items():
                back = (m[0] - k0[0], m[1] - k0[1])
                acc[back] = acc.get(back, 0) + (-2.0 * mu * th * th) * 2j * np.pi * (a @ np.array(m)) * v
    return _project(acc, keep_gradient=False)


class TestPerpBasis:
    def test_2d_axis(self):
        np.testing.assert_allclose(perp_basis((1, 0)), [[0.0, 1.0]])

    def test_2d_general(self):
        np.testing.assert_allclose(perp_basis((3, 4)), [[-0.8, 0.6]])

    def test_3d_axis_up_to_sign(self):
        a = perp_basis((0, 0, 1))
        expected = [np.array([1.0, 0, 0]), np.array([0, 1.0, 0])]
        for row in a:
            assert any(np.allclose(row, e) or np.allclose(row, -e) for e in expected)
        assert not np.allclose(np.abs(a[0]), np.abs(a[1]))

    @given(st.tuples(*[st.integers(-5, 5)] * 3).filter(any))
    def test_3d_orthonormal(self, k):
        a = perp_basis(k)
        np.testing.assert_allclose(a @ a.T, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(a @ np.array(k, dtype=float), 0.0, atol=1e-13)


class TestBasis:
    def test_positive_half_and_mirror_frame(self):
        b = build_basis(2, [(1, 0), (-1, 0), (0, 1), (0, -1)])
        assert [tuple(k) for k in b.kplus] == [(0, 1), (1, 0)]
        np.testing.assert_array_equal(b.frame((-1, 0)), b.frame((1, 0)))
        assert b.contains((0, -1)) and not b.contains((1, 1))

    @pytest.mark.parametrize(
        "support", [[], [(1, 0)], [(0, 0), (1, 0), (-1, 0)], [(1, 0, 0), (-1, 0, 0)]]
    )
    def test_rejects_bad_support(self, support):
        with pytest.raises(NoiseError):
            build_basis(2, support)

    def test_is_positive(self):
        assert is_positive((0, 1)) and is_positive((1, -5))
        assert not is_positive((0, -1)) and not is_positive((0, 0))


class TestThetaCanonical:
    def test_n1_enumeration(self):
        theta = theta_canonical(2, 1, 1.0)
        expected = sorted(k for k in itertools.product(range(-2, 3), repeat=2) if 1 <= k[0] ** 2 + k[1] ** 2 <= 4)
        assert [tuple(k) for k in theta.kvecs] == expected
        assert len(expected) == 12
        # ||Theta||^2 = 4 * 1 + 4 * 1/2 + 4 * 1/4 = 7
        assert theta.as_dict()[(1, 0)] == pytest.approx(1 / math.sqrt(7), rel=1e-14)
        assert theta.as_dict()[(1, 0)] == pytest.approx(0.37796, abs=5e-6)

    @given(st.integers(1, 12), st.floats(0.2, 3.0))
    def test_normalized_symmetric_radial(self, n, r):
        theta = theta_canonical(2, n, r)
        assert theta.l2 == pytest.approx(1.0, abs=1e-14)
        assert theta.is_symmetric()
        assert theta.radial_defect() < 1e-15
        assert theta.is_radially_complete()

    def test_linf_strictly_decreasing(self):
        linf = [theta_canonical(2, n, 1.0).linf for n in (1, 2, 4, 8, 16)]
        assert all(b < a for a, b in zip(linf, linf[1:]))

    def test_rejects_bad_parameters(self):
        with pytest.raises(NoiseError):
            theta_canonical(2, 0, 1.0)
        with pytest.raises(NoiseError):
            theta_canonical(2, 1, 0.0)

    def test_explicit_table_is_symmetrized(self):
        theta = theta_explicit(2, {(1, 0): 2.0})
        assert theta.as_dict() == {(-1, 0): pytest.approx(2**-0.5), (1, 0): pytest.approx(2**-0.5)}
        with pytest.raises(NoiseError):
            theta_explicit(2, {(1, 0): 1.0, (-1, 0): 2.0})

    def test_rows(self):
        theta = theta_canonical(2, 1, 1.0)
        assert theta.rows()[0] == (-2, 0, pytest.approx(0.5 / math.sqrt(7)))


class TestIsotropy:
    @pytest.mark.parametrize("n", range(1, 9))
    def test_canonical_2d(self, n):
        theta = theta_canonical(2, n, 1.0)
        np.testing.assert_allclose(isotropy_matrix(theta, basis_for(theta)), 0.5 * np.eye(2), atol=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_canonical_3d(self, n):
        theta = theta_canonical(3, n, 1.0)
        np.testing.assert_allclose(isotropy_matrix(theta, basis_for(theta)), np.eye(3) * 2 / 3, atol=1e-12)

    @given(st.sets(st.integers(1, 25), min_size=1, max_size=4), seeds)
    def test_random_radial_family(self, shells, seed):
        shells = [r2 for r2 in shells if lattice_shell(2, r2)]
        if not shells:
            return
        theta = random_radial_theta(2, shells, seed)
        assert isotropy_defect(theta, basis_for(theta)) < 1e-12

    def test_single_pair_detected(self):
        theta = theta_explicit(2, {(1, 0): 1.0})
        m = isotropy_matrix(theta, basis_for(theta))
        # theta^2 = 1/2 on each of +-(1,0), frame (0,1): 2 * 1/2 * e_y e_y^T
        np.testing.assert_allclose(m, [[0.0, 0.0], [0.0, 1.0]], atol=1e-15)
        assert isotropy_defect(theta, basis_for(theta)) == pytest.approx(0.5)

    def test_c_d(self):
        assert c_d(2) == 2.0 and c_d(3) == 1.5


class TestChannels:
    def test_order_and_count(self):
        theta = theta_canonical(2, 1, 1.0)
        basis = basis_for(theta)
        ch = channels(theta, basis)
        assert ch.size == n_channels(basis) == 12
        np.testing.assert_array_equal(ch.kind[:4], [0, 1, 0, 1])
        np.testing.assert_array_equal(ch.k[0], ch.k[1])
        assert [tuple(k) for k in ch.k[::2]] == [tuple(k) for k in basis.kplus]

    def test_3d_count(self):
        theta = theta_canonical(3, 1, 1.0)
        assert n_channels(basis_for(theta)) == 4 * (len(theta.kvecs) // 2)

    def test_empty(self):
        assert basis_for(empty_theta(2)) is None
        assert n_channels(None) == 0


class TestBrownianDriver:
    def test_reproducible(self):
        a = BrownianDriver(7, 3, 5, 0.01)
        b = BrownianDriver(7, 3, 5, 0.01)
        for _ in range(4):
            np.testing.assert_array_equal(a.next(), b.next())

    def test_paths_differ(self):
        assert not np.allclose(BrownianDriver(7, 0, 5, 0.01).next(), BrownianDriver(7, 1, 5, 0.01).next())

    def test_substeps_sum_fine_increments(self):
        fine = BrownianDriver(1, 2, 3, 0.001, substeps=1)
        coarse = BrownianDriver(1, 2, 3, 0.004, substeps=4)
        for _ in range(3):
            expected = sum(fine.next() for _ in range(4))
            np.testing.assert_allclose(coarse.next(), expected, rtol=1e-14, atol=1e-16)

    def test_stream_layout(self):
        drv = BrownianDriver(5, 9, 4, 0.25, substeps=2)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([5, 9])))
        z = rng.standard_normal((2, 4))
        np.testing.assert_allclose(drv.next(), (z * math.sqrt(0.125)).sum(axis=0), rtol=1e-15)

    def test_variance(self):
        drv = BrownianDriver(0, 0, 2000, 0.01)
        z = np.concatenate([drv.next() for _ in range(10)])
        assert np.var(z) == pytest.approx(0.01, rel=0.05)


class TestTransportIncrement:
    def test_zero_cases(self):
        theta = theta_canonical(2, 1, 1.0)
        basis = basis_for(theta)
        f = from_modes(2, 16, 1, [((1, 0), 0.5)])
        zero_inc = apply_transport_noise(theta, basis, f, np.zeros(12), 0.5)
        assert zero_inc.l2_sq() == 0.0
        zero_f = apply_transport_noise(theta, basis, SpectralField.zeros(f.grid), np.ones(12), 0.5)
        assert zero_f.l2_sq() == 0.0

    def test_rejects_wrong_increment_count(self):
        theta = theta_canonical(2, 1, 1.0)
        with pytest.raises(NoiseError):
            apply_transport_noise(theta, basis_for(theta), from_modes(2, 16, 1, [((1, 0), 0.5)]), np.ones(3), 0.5)

    @pytest.mark.parametrize("mode", ["scalar", "vorticity", "velocity"])
    @given(seed=seeds, n=st.integers(1, 3))
    def test_padded_operator_matches_shift_reference(self, mode, seed, n):
        N = 32
        theta = theta_canonical(2, n, 1.0)
        basis = basis_for(theta)
        rng = np.random.default_rng(seed)
        f = random_field(N, seed)
        if mode == "velocity":
            f = biot_savart(f)
        dB = rng.standard_normal((2, n_channels(basis))) * 0.1
        op = TransportOperator(f.grid, theta, basis, 0.7, mode)
        batch = np.stack([f.coeffs, 0.5 * f.coeffs])
        fast = op.apply(batch, dB)
        for b in range(2):
            ref = apply_transport_noise(theta, basis, f * (1.0 - 0.5 * b), dB[b], 0.7, mode)
            np.testing.assert_allclose(fast[b], ref.coeffs, atol=1e-12 * max(1.0, np.abs(ref.coeffs).max()))

    def test_3d_scalar_operator(self):
        theta = theta_canonical(3, 1, 1.0)
        basis = basis_for(theta)
        f = random_field(8, 4, d=3)
        dB = np.random.default_rng(0).standard_normal((1, n_channels(basis)))
        fast = TransportOperator(f.grid, theta, basis, 0.3, "scalar").apply(f.coeffs[None], dB)[0]
        ref = apply_transport_noise(theta, basis, f, dB[0], 0.3)
        np.testing.assert_allclose(fast, ref.coeffs, atol=1e-11)

    def test_batch_rows_bit_identical(self):
        theta = theta_canonical(2, 2, 1.0)
        basis = basis_for(theta)
        f = random_field(32, 1)
        op = TransportOperator(f.grid, theta, basis, 0.5, "scalar")
        dB = np.random.default_rng(2).standard_normal((3, n_channels(basis)))
        batch = op.apply(np.stack([f.coeffs] * 3), dB)
        single = op.apply(f.coeffs[None], dB[1:2])
        np.testing.assert_array_equal(batch[1], single[0])

    def test_padded_length(self):
        assert padded_length(128, 32) == 160
        assert padded_length(32, 2) % 2 == 0 and padded_length(32, 2) >= 33

    def test_ito_isometry_monte_carlo(self):
        N, dt, mu, draws = 16, 1e-3, 0.5, 10_000
        theta = theta_canonical(2, 1, 1.0)
        basis = basis_for(theta)
        f = from_modes(2, N, 1, [((1, 0), 0.5), ((1, 1), 0.25j)])
        op = TransportOperator(f.grid, theta, basis, mu, "scalar")
        rng = np.random.default_rng(11)
        dB = rng.standard_normal((draws, n_channels(basis))) * math.sqrt(dt)
        inc = op.apply(np.repeat(f.coeffs[None], draws, axis=0), dB)
        sq = f.grid.sum_sq(inc)
        est = sq.mean() / dt
        se = sq.std(ddof=1) / math.sqrt(draws) / dt
        oracle = quadratic_variation(theta, basis, f, mu)
        assert abs(est - oracle) < 5 * se
        # isotropy: sum of channels equals c_d mu ||grad f||^2 * (2 / c_d) on interior modes
        from transport_noise.spectral import gradient_l2_sq

        assert oracle == pytest.approx(2 * mu * gradient_l2_sq(f), rel=1e-12)


class TestCorrector:
    def test_cosine(self):
        f = from_modes(2, 16, 1, [((1, 0), 0.5)])
        theta = theta_canonical(2, 1, 1.0)
        out = stratonovich_corrector(theta, basis_for(theta), f, 1.0)
        X = np.arange(16)[:, None] / 16 * np.ones((1, 16))
        np.testing.assert_allclose(out.values(), -4 * np.pi**2 * np.cos(2 * np.pi * X), atol=1e-11)

    def test_zero(self):
        theta = theta_canonical(2, 1, 1.0)
        assert stratonovich_corrector(theta, basis_for(theta), SpectralField.zeros(Grid(2, 16)), 1.0).l2_sq() == 0.0

    @pytest.mark.parametrize("n", [1, 4])
    @given(seed=seeds)
    def test_random_interior_fields(self, n, seed):
        N, mu = 32, 0.3
        theta = theta_canonical(2, n, 1.0)
        f = interior_field(N, seed, 2 * 2 * n)
        out = stratonovich_corrector(theta, basis_for(theta), f, mu)
        target = laplacian(f) * mu
        assert math.sqrt((out - target).l2_sq()) <= 1e-10 * math.sqrt(laplacian(f).l2_sq())

    def test_3d(self):
        theta = theta_canonical(3, 1, 1.0)
        f = interior_field(16, 3, 4, d=3)
        out = stratonovich_corrector(theta, basis_for(theta), f, 0.4)
        np.testing.assert_allclose(out.coeffs, 0.4 * laplacian(f).coeffs, atol=1e-9)

    def test_rejects_velocity(self):
        theta = theta_canonical(2, 1, 1.0)
        with pytest.raises(NoiseError):
            stratonovich_corrector(theta, basis_for(theta), SpectralField.zeros(Grid(2, 8), "vector"), 1.0, "velocity")


class TestQTheta:
    def _shell_theta(self):
        return theta_explicit(2, {(1, 0): 0.5, (0, 1): 0.5}, normalize=False)

    def test_zero(self):
        theta = self._shell_theta()
        assert q_theta(theta, basis_for(theta), SpectralField.zeros(Grid(2, 16), "vector"), 1.0).l2_sq() == 0.0

    def test_unit_shell_against_mode_oracle(self):
        theta = self._shell_theta()
        basis = basis_for(theta)
        u = from_modes(2, 16, "vector", [((0, 1), (-0.5j, 0.0))])  # (sin 2 pi y, 0)
        out = q_theta(theta, basis, u, 1.0)
        oracle = q_oracle(theta, basis, u, 1.0)
        got = _modes_of(out)
        for k, v in oracle.items():
            np.testing.assert_allclose(got.get(k, np.zeros(2)), v, atol=1e-12)
        for k, v in got.items():
            np.testing.assert_allclose(v, oracle.get(k, np.zeros(2)), atol=1e-12)

    def test_unit_shell_value(self):
        # only k0 = +-(1,0) with a = (0,1) couples to k = (0,1); n = (+-1,1)/sqrt 2, (p.n)^2 = 1/2
        theta = self._shell_theta()
        u = from_modes(2, 16, "vector", [((0, 1), (-0.5j, 0.0))])
        out = q_theta(theta, basis_for(theta), u, 1.0)
        expected = 8 * np.pi**2 * 1.0 * (2 * 0.25 * 1.0 * 0.5)
        np.testing.assert_allclose(out.coeffs, expected * u.coeffs, atol=1e-12)

    @given(seed=seeds, n=st.integers(1, 2))
    def test_random_fields_against_mode_oracle(self, seed, n):
        theta = theta_canonical(2, n, 1.0)
        basis = basis_for(theta)
        u = biot_savart(random_field(32, seed, kmax=3))
        got = _modes_of(q_theta(theta, basis, u, 0.6))
        oracle = q_oracle(theta, basis, u, 0.6)
        keys = set(got) | set(oracle)
        for k in keys:
            np.testing.assert_allclose(got.get(k, np.zeros(2)), oracle.get(k, np.zeros(2)), atol=1e-10)

    @pytest.mark.parametrize("k", [(1, 0), (1, 1), (2, -1)])
    def test_symbol_matches_direct_summation(self, k):
        theta = theta_canonical(2, 2, 1.0)
        basis = basis_for(theta)
        u = biot_savart(from_modes(2, 32, 1, [(k, 0.5)]))
        out = q_theta(theta, basis, u, 0.5)
        lam = q_theta_symbol_at(theta, basis, k, 0.5)
        np.testing.assert_allclose(out.coeffs, lam * u.coeffs, atol=1e-12 * lam)

    def test_rejects_divergent_field(self):
        theta = self._shell_theta()
        from transport_noise.spectral import gradient

        g = gradient(from_modes(2, 16, 1, [((1, 0), 0.5)]))
        with pytest.raises(NoiseError):
            q_theta(theta, basis_for(theta), g, 1.0)


class TestTransferWeights:
    @given(n=st.integers(1, 3))
    def test_interior_scalar_weight_is_isotropic(self, n):
        grid = Grid(2, 32)
        theta = theta_canonical(2, n, 1.0)
        w = transfer_weights(theta, basis_for(theta), grid, "scalar")
        interior = np.max(np.abs(grid.kvec), axis=0) < 16 - 2 * n
        np.testing.assert_allclose(w[interior], grid.k2[interior] / 2.0, rtol=1e-12, atol=1e-12)

    def test_velocity_weight_matches_quadratic_variation(self):
        grid = Grid(2, 32)
        theta = theta_canonical(2, 2, 1.0)
        basis = basis_for(theta)
        w = transfer_weights(theta, basis, grid, "velocity")
        u = biot_savart(from_modes(2, 32, 1, [((1, 2), 0.5)]))
        qv = quadratic_variation(theta, basis, u, 0.5, "velocity")
        idx, _ = grid.index_of((1, 2))
        assert qv == pytest.approx(8 * np.pi**2 * 1.0 * w[idx] * u.l2_sq(), rel=1e-12)
