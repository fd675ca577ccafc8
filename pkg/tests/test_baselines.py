import numpy as np
import pytest

from fascsi import oracles
from fascsi.baselines import _angular_pursuit, aoa_codebook_estimate, build_aoa_dictionary, ls_estimate, somp
from fascsi.channel import PilotCodebook, SceneConfig, assemble_scene, build_codebook, steering_vector, synthesize_rx


def noiseless(K=100, G=50, N_o=8, K_a=5, seed=0):
    cb = build_codebook(G, K, seed)
    scene = assemble_scene(SceneConfig(K=K, G=G, N_o=N_o, K_a=K_a), seed + 1)
    return cb, scene, synthesize_rx(cb, scene, 0.0, 0)


def test_somp_noiseless_exact_support():
    assert oracles.somp_recovery_suite(n_seeds=20)["rate"] == 1.0


def test_somp_residual_norms_decrease_and_stop_rule():
    cb, scene, Y = noiseless()
    res = somp(Y, cb, k_a=5)
    assert np.all(np.diff(res.residual_norms) <= 1e-12)
    assert res.residual_norms[-1] <= 1e-10 * np.linalg.norm(Y)
    tol = somp(Y, cb, residual_tol=1e-8 * np.linalg.norm(Y))
    assert set(tol.support) == scene.active_set


def test_somp_argument_errors():
    cb, scene, Y = noiseless()
    with pytest.raises(ValueError):
        somp(Y, cb)
    with pytest.raises(ValueError):
        somp(Y, cb, k_a=3, residual_tol=0.1)
    with pytest.raises(ValueError):
        somp(Y, cb, k_a=51)


def test_somp_tie_goes_to_lower_index():
    a = np.array([1.0, 0.0, 0.0], dtype=complex)
    A = np.column_stack([np.array([0, 1, 0], dtype=complex), a, a])
    res = somp(A[:, [1]], PilotCodebook(A), k_a=1)
    assert res.support == [1]


def test_somp_flags_dependent_columns():
    a = np.array([1.0, 0.0, 0.0], dtype=complex)
    A = np.column_stack([a, a, np.array([0, 1, 0], dtype=complex)])
    Y = np.outer(a, [1.0, 2.0])
    res = somp(Y, PilotCodebook(A), k_a=2)
    assert res.rank_deficient


def test_somp_macs_grow_with_support():
    cb, scene, Y = noiseless()
    assert somp(Y, cb, k_a=2).mac_count < somp(Y, cb, k_a=5).mac_count


def test_ls_noiseless_exact():
    cb, scene, Y = noiseless()
    est = ls_estimate(Y, cb, scene.activity)
    err = np.sum(np.abs(est.x_hat - scene.X) ** 2) / np.sum(np.abs(scene.X) ** 2)
    assert err <= 1e-12
    assert not est.rank_deficient


def test_ls_matches_pseudo_inverse():
    rng = np.random.default_rng(4)
    cb = build_codebook(30, 60, 2)
    Y = rng.normal(size=(30, 4)) + 1j * rng.normal(size=(30, 4))
    S = [3, 7, 20, 41]
    est = ls_estimate(Y, cb, S)
    np.testing.assert_allclose(est.x_hat[S], np.linalg.pinv(cb.A[:, S]) @ Y, atol=1e-12)
    assert not np.any(np.delete(est.x_hat, S, axis=0))


def test_ls_rank_deficient_falls_back():
    a = np.array([1.0, 0.0, 0.0], dtype=complex)
    A = np.column_stack([a, a, np.array([0, 1, 0], dtype=complex)])
    est = ls_estimate(np.outer(a, [2.0]), PilotCodebook(A), [0, 1])
    assert est.rank_deficient
    # minimum-norm split of the shared column
    np.testing.assert_allclose(est.x_hat[:2, 0], [1.0, 1.0], atol=1e-12)


def test_ls_empty_support_and_oversized():
    cb, scene, Y = noiseless()
    assert not ls_estimate(Y, cb, []).x_hat.any()
    with pytest.raises(ValueError):
        ls_estimate(Y, cb, range(51))


def test_aoa_dictionary_shape_and_norm():
    d = build_aoa_dictionary(121, 8, 64)
    assert d.D.shape == (8, 121) and d.N_s == 121
    np.testing.assert_allclose(np.linalg.norm(d.D, axis=0), 1.0)
    assert d.angles[1] - d.angles[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        build_aoa_dictionary(1)


def test_aoa_estimate_recovers_on_grid_paths():
    G, K, N_o = 40, 60, 16
    cb = build_codebook(G, K, 0)
    X = np.zeros((K, N_o), dtype=complex)
    X[5] = 0.7 * steering_vector(60.0, N_o, 64) + (0.2 - 0.1j) * steering_vector(101.0, N_o, 64)
    X[9] = 1.1j * steering_vector(45.0, N_o, 64)
    Y = cb.A @ X
    est = aoa_codebook_estimate(Y, cb, [5, 9], build_aoa_dictionary(121, N_o, 64), sparsity=2)
    np.testing.assert_allclose(est.x_hat, X, atol=1e-10)


def test_aoa_estimate_with_enough_atoms_reproduces_ls():
    cb, scene, Y = noiseless(N_o=2)
    d = build_aoa_dictionary(121, 2, 64)
    ls = ls_estimate(Y, cb, scene.activity)
    est = aoa_codebook_estimate(Y, cb, scene.activity, d, sparsity=3)
    np.testing.assert_allclose(est.x_hat, ls.x_hat, atol=1e-10)
    with pytest.raises(ValueError):
        aoa_codebook_estimate(Y, cb, scene.activity, d, sparsity=200)


def test_somp_single_user_and_zero_input():
    cb, scene, Y = noiseless(K_a=1, seed=3)
    res = somp(Y, cb, k_a=1)
    assert res.support == list(scene.activity) and res.residual_norms[0] <= 1e-10 * np.linalg.norm(Y)
    assert somp(np.zeros_like(Y), cb, residual_tol=1e-12).support == []


def test_dictionary_broadside_atom():
    d = build_aoa_dictionary(121, 8, 64)
    np.testing.assert_allclose(d.D[:, 60], np.full(8, 1 / np.sqrt(8)), atol=1e-12)


def test_ls_residual_orthogonal_to_support():
    rng = np.random.default_rng(8)
    cb = build_codebook(40, 80, 1)
    Y = rng.normal(size=(40, 3)) + 1j * rng.normal(size=(40, 3))
    S = [1, 5, 9, 30, 77]
    R = Y - cb.A[:, S] @ ls_estimate(Y, cb, S).x_hat[S]
    assert np.max(np.abs(cb.A[:, S].conj().T @ R)) <= 1e-8


def test_ls_against_high_precision_solve():
    import mpmath

    rng = np.random.default_rng(9)
    cb = build_codebook(12, 20, 2)
    S = [0, 4, 11, 19]
    Y = rng.normal(size=(12, 2)) + 1j * rng.normal(size=(12, 2))
    B = cb.A[:, S]
    with mpmath.workdps(60):
        Bm = mpmath.matrix([[mpmath.mpc(complex(z)) for z in row] for row in B])
        BH = Bm.H
        for n in range(2):
            yv = mpmath.matrix([mpmath.mpc(complex(z)) for z in Y[:, n]])
            ref = mpmath.lu_solve(BH * Bm, BH * yv)
            got = ls_estimate(Y, cb, S).x_hat[S, n]
            for i in range(len(S)):
                assert abs(complex(got[i]) - complex(ref[i])) <= 1e-10 * abs(complex(ref[i]))


def test_off_grid_path_error_bounded_by_grid_mismatch():
    # a single path between dictionary angles is approximated, never reproduced exactly
    N_o = 8
    d = build_aoa_dictionary(121, N_o, 64)
    worst = 0.0
    for theta in np.arange(30.25, 150, 0.5):
        h = steering_vector(theta, N_o, 64)
        approx, _ = _angular_pursuit(h, d.D, 1)
        worst = max(worst, np.linalg.norm(approx - h) ** 2)
    assert 0 < worst < 0.5


def test_full_sparsity_projects_on_dictionary_range():
    N_o = 4
    d = build_aoa_dictionary(9, N_o, 64)
    h = np.array([1.0, -0.5j, 0.2, 0.3 + 0.1j])
    approx, _ = _angular_pursuit(h, d.D, d.N_s)
    P = d.D @ np.linalg.pinv(d.D)
    np.testing.assert_allclose(approx, P @ h, atol=1e-10)
