import numpy as np
import pytest

from fascsi import amp, oracles
from fascsi.amp import AmpConfig, AmpDivergenceError, detect_activity, em_update, init_state, macs_per_iteration
from fascsi.channel import SceneConfig, assemble_scene, build_codebook, noise_variance_for_snr, synthesize_rx


def frame(K=200, G=100, N_o=8, K_a=10, snr_db=20.0, seed=0):
    cfg = SceneConfig(K=K, G=G, N_o=N_o, K_a=K_a)
    cb = build_codebook(G, K, seed)
    scene = assemble_scene(cfg, seed + 1)
    psi = noise_variance_for_snr(10 ** (snr_db / 10), float(np.mean(scene.lsfc[scene.activity])), G)
    return cfg, cb, scene, psi, synthesize_rx(cb, scene, psi, seed + 2)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize(
    "config",
    [
        AmpConfig(phi_min=1e-3, phi_max=10.0),
        AmpConfig(variant="conventional", phi_min=1e-3, phi_max=10.0),
        AmpConfig(phi_min=1e-3, phi_max=10.0, mean_update="row"),
    ],
    ids=["geographical", "conventional", "row_mean"],
)
def test_sweep_matches_high_precision_transcription(seed, config):
    worst = oracles.transcription_suite(seed=seed, config=config)
    assert set(worst) >= {f"A{i}" for i in range(1, 11)} | {"B1", "B2", "B3", "B4", "E1", "E2", "E3"}
    assert max(worst.values()) <= 1e-10, worst


def test_em_variance_matches_grid_argmin():
    misses = oracles.em_grid_suite(n_cases=30, seed=3)
    assert misses == {"conventional": 0, "geographical": 0, "ascent": 0, "cases": 30}


def test_mac_count_close_to_closed_form():
    per = macs_per_iteration(1000, 400, 8)
    formula = amp.complexity_formula(1000, 400, 8)
    assert formula == 12_800_000 + 24_000 + 2_000
    assert abs(per / formula - 1) <= 0.10


def test_mac_count_doubles_with_ports():
    assert macs_per_iteration(1000, 400, 16) / macs_per_iteration(1000, 400, 8) == pytest.approx(2.0, rel=0.1)


def test_damping_charges_extra_multiplies():
    assert macs_per_iteration(10, 5, 2, damping=0.5) - macs_per_iteration(10, 5, 2) == 4 * 10 * 2


def test_high_snr_recovery():
    cfg, cb, scene, psi, Y = frame(snr_db=60.0)
    res = amp.run(Y, cb, psi, AmpConfig(), k_a=cfg.K_a)
    assert set(res.detected) == scene.active_set
    err = np.sum(np.abs(res.x_hat - scene.X) ** 2) / np.sum(np.abs(scene.X) ** 2)
    assert err <= 1e-3


@pytest.mark.parametrize("seed", range(3))
def test_geographical_variance_stays_in_range(seed):
    cfg, cb, scene, psi, Y = frame(snr_db=0.0, seed=seed)
    config = AmpConfig(phi_min=cfg.phi_min, phi_max=cfg.phi_max)
    state = init_state(Y, cb, psi, config)
    for _ in range(8):
        state = em_update(amp.amp_iteration(state, Y, cb, psi, config), config)
        assert np.all((state.phi >= cfg.phi_min) & (state.phi <= cfg.phi_max))
        assert np.all((state.lam >= 0) & (state.lam <= 1))
        assert np.all(state.x_var >= 0)
        # one variance per user row
        assert np.all(state.phi == state.phi[:, :1])


def test_run_is_deterministic_and_traced():
    cfg, cb, scene, psi, Y = frame(snr_db=5.0)
    a = amp.run(Y, cb, psi, AmpConfig(), k_a=cfg.K_a, x_true=scene.X)
    b = amp.run(Y, cb, psi, AmpConfig(), k_a=cfg.K_a, x_true=scene.X)
    np.testing.assert_array_equal(a.x_hat, b.x_hat)
    assert a.nmse_trace == b.nmse_trace
    assert len(a.trace) == a.iterations_used
    assert a.trace[-1]["mac_cumulative"] == a.mac_count == a.iterations_used * a.mac_per_iteration
    assert set(a.trace[0]) == {"t", "nmse_proxy", "mean_lambda", "mean_phi", "mac_cumulative"}


def test_divergence_is_reported_with_line():
    cfg, cb, scene, psi, Y = frame()
    Y = Y.copy()
    Y[0, 0] = np.nan
    state = init_state(np.zeros_like(Y), cb, psi, AmpConfig())
    with pytest.raises(AmpDivergenceError) as exc:
        amp.amp_iteration(state, Y, cb, psi)
    assert exc.value.line.startswith(("A", "B"))


def test_init_state_validation():
    cfg, cb, scene, psi, Y = frame()
    with pytest.raises(ValueError):
        init_state(Y, cb, 0.0, AmpConfig())
    with pytest.raises(ValueError):
        init_state(Y[:-1], cb, psi, AmpConfig())
    with pytest.raises(ValueError):
        em_update(init_state(Y, cb, psi, AmpConfig()))


def test_init_state_zero_signal_falls_back():
    cfg, cb, scene, psi, Y = frame()
    s = init_state(np.zeros_like(Y), cb, psi, AmpConfig(phi_min=1e-5, phi_max=1e-3))
    assert np.all(s.phi == 1e-5)


def test_detect_activity_rules():
    lam = np.array([0.2, 0.9, 0.9, 0.1, 0.6])
    np.testing.assert_array_equal(detect_activity(lam, "top_ka", 2), [1, 2])
    np.testing.assert_array_equal(detect_activity(lam, "top_ka", 3), [1, 2, 4])
    # ties resolve to the lower index
    np.testing.assert_array_equal(detect_activity(np.array([0.5, 0.5, 0.5]), "top_ka", 1), [0])
    np.testing.assert_array_equal(detect_activity(lam, "threshold", threshold=0.5), [1, 2, 4])
    with pytest.raises(ValueError):
        detect_activity(lam, "top_ka", None)
    with pytest.raises(ValueError):
        detect_activity(lam, "top_ka", 9)


def test_config_validation():
    for bad in (dict(t_max=0), dict(variant="x"), dict(phi_min=2.0, phi_max=1.0), dict(damping=0.0), dict(mean_update="y")):
        with pytest.raises(ValueError):
            AmpConfig(**bad)


def test_users_divisor_shrinks_activity():
    cfg, cb, scene, psi, Y = frame()
    a = amp.run(Y, cb, psi, AmpConfig(t_max=2, lambda_divisor="users"), k_a=cfg.K_a)
    b = amp.run(Y, cb, psi, AmpConfig(t_max=2), k_a=cfg.K_a)
    assert a.lam.max() < b.lam.max()


def test_initial_variance_energy_bookkeeping():
    cfg, cb, scene, psi, Y = frame(snr_db=300.0)
    s = init_state(cb.A @ scene.X, cb, 1e-30, AmpConfig(variant="conventional"))
    lam1 = s.lam[0]
    direct = np.sum(np.abs(cb.A @ scene.X) ** 2) / (np.sum(np.abs(cb.A) ** 2) * lam1 * Y.shape[1])
    assert s.phi[0, 0] == pytest.approx(direct, rel=1e-9)
    assert not s.s_hat.any() and not s.x_mean.any()
    np.testing.assert_allclose(s.x_var, lam1 * s.phi)


def test_em_constant_ratio_and_clamp():
    K, N_o = 2, 4
    state = amp.AmpState(
        x_mean=np.full((K, N_o), 0.03 + 0j),
        x_var=np.full((K, N_o), 1e-4),
        s_hat=np.zeros((3, N_o), dtype=complex),
        lam=np.full(K, 0.5),
        mu=np.zeros((K, N_o), dtype=complex),
        phi=np.full((K, N_o), 1e-4),
        psi=1.0,
        t=1,
        pi=np.full((K, N_o), 0.8),
        gamma=np.full((K, N_o), 0.03 + 0j),
        nu=np.full((K, N_o), 1e-4),
    )
    v = 0.03**2 - 1e-4
    conv = em_update(state, AmpConfig(variant="conventional"))
    np.testing.assert_allclose(conv.phi, v / 0.8)
    np.testing.assert_allclose(conv.lam, 0.8)
    geo = em_update(state, AmpConfig(phi_min=1e-6, phi_max=5e-4))
    assert np.all(geo.phi == 5e-4)
