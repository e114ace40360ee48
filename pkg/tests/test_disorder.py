import numpy as np
import pytest

from zipperlab.disorder import (
    SiteDisorder,
    ZipperParams,
    defect_roots,
    phase_pair,
    sample_haar_unitary,
    sample_site_disorder,
    sample_window,
    scattering_block,
)
from zipperlab.errors import NormTooLarge
from zipperlab.rng import Stream, parallel_map

from oracles import scattering_oracle


def _site(L, d=1.0, D=1.0, theta=0.0, Theta=0.0, Vt=None, Ut=None):
    eye = np.eye(L, dtype=complex)
    return SiteDisorder(
        eye if Vt is None else Vt,
        np.full(L, d),
        np.full(L, theta),
        eye if Ut is None else Ut,
        np.full(L, D),
        np.full(L, Theta),
        0,
    )


def _random_alpha(rng, L, norm):
    G = rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))
    return norm * G / np.linalg.norm(G, 2)


# --- Haar sampling ---------------------------------------------------------------


def test_haar_l1_is_unit_modulus():
    for seed in range(20):
        u = sample_haar_unitary(1, Stream(seed, "haar"))
        assert u.shape == (1, 1)
        assert abs(abs(u[0, 0]) - 1.0) <= 1e-12


def test_haar_l2_fixed_seed_is_unitary():
    U = sample_haar_unitary(2, 42)
    assert np.linalg.norm(U.conj().T @ U - np.eye(2)) <= 1e-12


def test_haar_column_moments_match_uniform_weight():
    L, n = 3, 10_000
    params = ZipperParams.scaled_identity(L, 0.1)
    w = sample_window(params, 0, n, Stream(5, "haar_moments"))
    sq = np.abs(w.V_tilde) ** 2
    mean = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / np.sqrt(n)
    assert abs(mean[0, 0] - 1 / 3) <= 3 * se[0, 0]
    assert np.all(np.abs(mean - 1 / L) <= 4 * se)


def test_haar_phase_of_entries_is_uniform():
    # E[U_11] = 0 and E[U_11^2] = 0 under Haar invariance
    params = ZipperParams.scaled_identity(2, 0.1)
    w = sample_window(params, 0, 10_000, Stream(6, "haar_phase"))
    x = w.U_tilde[:, 0, 0]
    se = np.sqrt(np.mean(np.abs(x) ** 2) / x.size)
    assert abs(x.mean()) <= 4 * se
    assert abs(np.mean(x**2)) <= 4 * np.sqrt(np.mean(np.abs(x) ** 4) / x.size)


# --- site disorder -----------------------------------------------------------------


def test_bernoulli_signs_mean_zero_at_half():
    params = ZipperParams.scaled_identity(1, 0.1)
    w = sample_window(params, 0, 10_000, Stream(3))
    d1 = w.d[:, 0]
    assert set(np.unique(d1)) <= {-1.0, 1.0}
    assert abs(d1.mean()) <= 3 * d1.std(ddof=1) / np.sqrt(d1.size)


def test_bernoulli_success_maps_to_plus_one():
    params = ZipperParams.scaled_identity(1, 0.1, bernoulli_p=0.8)
    w = sample_window(params, 0, 10_000, Stream(4))
    x = w.D[:, 0]
    assert abs(x.mean() - 0.6) <= 3 * x.std(ddof=1) / np.sqrt(x.size)


def test_site_components_are_valid():
    params = ZipperParams.scaled_identity(3, 0.2)
    site = sample_site_disorder(params, 17, Stream(8))
    for U in (site.V_tilde, site.U_tilde):
        assert np.linalg.norm(U.conj().T @ U - np.eye(3)) <= 1e-12
    assert np.all(np.isin(site.d, [-1.0, 1.0])) and np.all(np.isin(site.D, [-1.0, 1.0]))
    assert np.all((site.theta >= 0) & (site.theta < 2 * np.pi))
    assert np.all((site.Theta >= 0) & (site.Theta < 2 * np.pi))
    assert site.site_index == 17


def test_same_site_same_seed_is_identical():
    params = ZipperParams.scaled_identity(2, 0.3)
    a = sample_site_disorder(params, 5, Stream(11))
    b = sample_site_disorder(params, 5, Stream(11))
    assert a.same_as(b)
    assert not a.same_as(sample_site_disorder(params, 5, Stream(12)))


def test_site_independent_of_window_and_threads():
    params = ZipperParams.scaled_random(2, 0.4, master_seed=1)
    w1 = sample_window(params, -10, 3, Stream(9))
    w2 = sample_window(params, 0, 20, Stream(9))
    for k in range(0, 3):
        assert w1.site(k).same_as(w2.site(k))
    serial = parallel_map(lambda k: sample_site_disorder(params, k, Stream(9)).V_tilde, 16, 1)
    threaded = parallel_map(lambda k: sample_site_disorder(params, k, Stream(9)).V_tilde, 16, 8)
    assert all(np.array_equal(x, y) for x, y in zip(serial, threaded))


def test_trials_are_independent_streams():
    params = ZipperParams.scaled_identity(1, 0.1)
    a = sample_site_disorder(params, 0, Stream(1, "disorder", 0))
    b = sample_site_disorder(params, 0, Stream(1, "disorder", 1))
    assert not a.same_as(b)


# --- phases -----------------------------------------------------------------------


def test_positive_signs_give_identity_hat():
    ph = phase_pair(_site(2, D=1.0, Theta=0.7))
    assert np.allclose(ph.U_hat, np.eye(2), atol=1e-15)
    assert np.allclose(ph.U_phase, np.exp(0.7j) * np.eye(2), atol=1e-15)


def test_negative_signs_give_minus_identity():
    ph = phase_pair(_site(3, d=-1.0))
    assert np.allclose(ph.V_hat, -np.eye(3), atol=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_hats_are_hermitian_involutions(seed):
    params = ZipperParams.scaled_identity(3, 0.2)
    site = sample_site_disorder(params, seed, Stream(seed))
    ph = phase_pair(site)
    for H in (ph.U_hat, ph.V_hat):
        assert np.linalg.norm(H @ H - np.eye(3)) <= 1e-10
        assert np.linalg.norm(H - H.conj().T) <= 1e-10
    assert np.allclose(ph.U_phase, np.diag(np.exp(1j * site.Theta)) @ ph.U_hat, atol=1e-14)
    assert np.allclose(ph.V_phase, ph.V_hat @ np.diag(np.exp(1j * site.theta)), atol=1e-14)


# --- defect roots --------------------------------------------------------------------


def test_defect_roots_at_zero():
    rho, rho_t = defect_roots(np.zeros((2, 2)))
    assert np.allclose(rho, np.eye(2)) and np.allclose(rho_t, np.eye(2))


def test_defect_roots_scalar():
    rho, rho_t = defect_roots(np.array([[0.6]]))
    assert rho[0, 0] == pytest.approx(0.8, abs=1e-15)
    assert rho_t[0, 0] == pytest.approx(0.8, abs=1e-15)


def test_defect_roots_rejects_large_norm():
    with pytest.raises(NormTooLarge):
        defect_roots(np.array([[1.0]]))
    with pytest.raises(NormTooLarge):
        ZipperParams.scaled_identity(2, 1.2)


@pytest.mark.parametrize("norm", [0.1 * k for k in range(1, 10)])
def test_defect_root_norm_bounds(norm):
    rng = np.random.default_rng(int(norm * 100))
    s = np.sqrt(1 - norm**2)
    for _ in range(112):
        L = rng.integers(1, 4)
        alpha = _random_alpha(rng, L, norm)
        rho, rho_t = defect_roots(alpha)
        eye = np.eye(L)
        assert np.linalg.norm(rho @ rho - (eye - alpha @ alpha.conj().T)) <= 1e-10
        assert np.linalg.norm(rho_t @ rho_t - (eye - alpha.conj().T @ alpha)) <= 1e-10
        assert np.linalg.norm(alpha @ np.linalg.inv(rho_t) - np.linalg.inv(rho) @ alpha) <= 1e-10
        for R in (rho, rho_t):
            assert np.min(np.linalg.eigvalsh(R)) >= -1e-14
            n = np.linalg.norm(R, 2)
            ninv = np.linalg.norm(np.linalg.inv(R), 2)
            assert s - 1e-12 <= n <= 2 - s + 1e-12
            assert ninv <= 1 / s + 1e-12
            assert ninv >= 1 / (2 - s) - 1e-12


# --- scattering blocks ---------------------------------------------------------------


def test_scattering_block_free_swap():
    S = scattering_block(np.zeros((1, 1)), phase_pair(_site(1)), 0)
    assert np.allclose(S.matrix, [[0, 1], [1, 0]])


def test_scattering_block_scalar():
    S = scattering_block(np.array([[0.6]]), phase_pair(_site(1)), 0)
    assert np.allclose(S.matrix, [[0.6, 0.8], [0.8, -0.6]], atol=1e-15)
    assert np.allclose(S.matrix.conj().T @ S.matrix, np.eye(2), atol=1e-15)


@pytest.mark.parametrize("seed", range(12))
def test_scattering_block_random_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    L = 1 + seed % 3
    params = ZipperParams(L, _random_alpha(rng, L, 0.1 + 0.07 * seed))
    site = sample_site_disorder(params, seed, Stream(seed))
    S = scattering_block(params.alpha, phase_pair(site), seed)
    assert np.linalg.norm(S.matrix.conj().T @ S.matrix - np.eye(2 * L)) <= 1e-10
    assert np.linalg.svd(S.beta, compute_uv=False)[-1] > 0
    assert np.linalg.norm(S.matrix - scattering_oracle(params.alpha, site)) <= 1e-12
    assert np.array_equal(S.alpha, params.alpha)


def test_window_blocks_match_per_site_construction():
    params = ZipperParams.scaled_random(2, 0.5, master_seed=3)
    w = sample_window(params, -3, 4, Stream(2))
    for k in range(-3, 4):
        S = scattering_block(params.alpha, phase_pair(w.site(k)), k).matrix
        assert np.allclose(w.block(k).matrix, S, atol=1e-14)


def test_scaled_random_has_prescribed_norm():
    p = ZipperParams.scaled_random(3, 0.37, master_seed=4)
    assert p.alpha_norm == pytest.approx(0.37, abs=1e-14)
    assert p.alpha_invertible
