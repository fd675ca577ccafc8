"""Independent reference computations used by the self-test and the test suite.

Nothing here calls the closed forms it checks: posterior moments come from
2-D Simpson quadrature over the complex plane, the EM variance from a dense
grid search of its objective, and single AMP sweeps from a line-by-line
transcription evaluated in mpmath at high precision.
"""

from __future__ import annotations

import math
from dataclasses import replace

import mpmath
import numpy as np
from scipy.integrate import simpson

from . import amp, bg
from .baselines import somp
from .channel import PilotCodebook, SceneConfig, assemble_scene, build_codebook, synthesize_rx


def _plane(center: complex, half_width: float, n: int):
    re = np.linspace(center.real - half_width, center.real + half_width, n)
    im = np.linspace(center.imag - half_width, center.imag + half_width, n)
    R, I = np.meshgrid(re, im, indexing="ij")
    return re, im, R + 1j * I


def _integrate(values, re, im) -> complex:
    return simpson(simpson(values, x=im, axis=1), x=re)


def _log_cn(x, mu, var):
    d = x - mu
    return -math.log(math.pi * var) - (d.real**2 + d.imag**2) / var


def quad_output_posterior(y, mu_r, phi_r, psi, n: int = 401, width: float = 8.0):
    """Mean and variance of p(r | y) proportional to CN(y; r, psi) CN(r; mu_r, phi_r)."""
    y, mu_r = complex(y), complex(mu_r)
    s = math.sqrt(min(phi_r, psi))
    re, im, Z = _plane((y + mu_r) / 2, width * s + abs(y - mu_r) / 2, n)
    logp = _log_cn(y, Z, psi) + _log_cn(Z, mu_r, phi_r)
    p = np.exp(logp - logp.max())
    norm = _integrate(p, re, im).real
    mean = _integrate(Z * p, re, im) / norm
    var = _integrate(np.abs(Z - mean) ** 2 * p, re, im).real / norm
    return mean, var


def quad_input_posterior(mu_x_hat, phi_x_hat, lam, mu, phi, n: int = 401, width: float = 8.0):
    """Moments of the BG posterior with the point mass at zero weighted explicitly.

    Returns (mean, var, zeta) where zeta is the normalizer obtained by
    integrating the slab numerically and adding the delta mass.
    """
    mu_x_hat, mu = complex(mu_x_hat), complex(mu)
    s = math.sqrt(min(phi, phi_x_hat))
    re, im, Z = _plane((mu_x_hat + mu) / 2, width * s + abs(mu_x_hat - mu) / 2, n)
    slab = lam * np.exp(_log_cn(Z, mu, phi) + _log_cn(Z, mu_x_hat, phi_x_hat))
    spike = (1 - lam) * math.exp(_log_cn(0j, mu_x_hat, phi_x_hat))
    zeta = spike + _integrate(slab, re, im).real
    mean = _integrate(Z * slab, re, im) / zeta
    second = _integrate(np.abs(Z) ** 2 * slab, re, im).real / zeta
    return mean, second - abs(mean) ** 2, zeta


def rel_err(value, reference, scale=None) -> float:
    """|value - reference| relative to |reference| (or to ``scale`` when given)."""
    denom = abs(reference) if scale is None else scale
    return abs(value - reference) / denom


def random_output_case(rng):
    phi_r = 10 ** rng.uniform(-1, 1)
    psi = 10 ** rng.uniform(-1, 1)
    mu_r = complex(*rng.normal(0, 1, 2))
    r = mu_r + complex(*rng.normal(0, math.sqrt(phi_r / 2), 2))
    y = r + complex(*rng.normal(0, math.sqrt(psi / 2), 2))
    return y, mu_r, phi_r, psi


def random_input_case(rng):
    lam = rng.uniform(0.05, 0.95)
    mu = complex(*rng.normal(0, 0.5, 2))
    phi = 10 ** rng.uniform(-1, 1)
    phi_x_hat = 10 ** rng.uniform(-1, 1)
    x = mu + complex(*rng.normal(0, math.sqrt(phi / 2), 2)) if rng.random() < lam else 0j
    mu_x_hat = x + complex(*rng.normal(0, math.sqrt(phi_x_hat / 2), 2))
    return mu_x_hat, phi_x_hat, lam, mu, phi


def posterior_quadrature_suite(n_cases: int = 100, seed: int = 0, impl=None) -> dict:
    """Worst relative errors of closed-form moments against quadrature.

    Complex means are compared relative to max(|mean|, posterior std) so that
    means near zero do not blow up the ratio.
    """
    impl = impl or {"output": bg.output_posterior, "input": bg.input_posterior}
    rng = np.random.default_rng(seed)
    worst = {"output_mean": 0.0, "output_var": 0.0, "input_mean": 0.0, "input_var": 0.0, "zeta": 0.0}
    for _ in range(n_cases):
        y, mu_r, phi_r, psi = random_output_case(rng)
        got = impl["output"](y, mu_r, phi_r, psi)
        qm, qv = quad_output_posterior(y, mu_r, phi_r, psi)
        worst["output_mean"] = max(worst["output_mean"], rel_err(complex(got.mean), qm, max(abs(qm), math.sqrt(qv))))
        worst["output_var"] = max(worst["output_var"], rel_err(float(got.var), qv))

        mu_x_hat, phi_x_hat, lam, mu, phi = random_input_case(rng)
        prior = bg.BGParams(lam, mu, phi)
        got = impl["input"](mu_x_hat, phi_x_hat, prior)
        qm, qv, qz = quad_input_posterior(mu_x_hat, phi_x_hat, lam, mu, phi)
        worst["input_mean"] = max(worst["input_mean"], rel_err(complex(got.mean), qm, max(abs(qm), math.sqrt(qv))))
        worst["input_var"] = max(worst["input_var"], rel_err(float(got.var), qv))
        worst["zeta"] = max(worst["zeta"], rel_err(float(bg.evidence(mu_x_hat, phi_x_hat, prior)), qz))
    return worst


# ---------------------------------------------------------------- EM variance


def em_objective(phi, pi, V):
    """sum_n pi_n ln(phi) + V_n / phi, evaluated for an array of phi."""
    phi = np.asarray(phi, dtype=float)[..., None]
    return np.sum(pi * np.log(phi) + V / phi, axis=-1)


def grid_argmin(pi, V, lo: float, hi: float, n: int = 100_000):
    """Minimizer of the EM objective on a log-spaced grid; returns (argmin, local grid step)."""
    grid = np.geomspace(lo, hi, n)
    obj = np.sum(pi) * np.log(grid) + np.sum(V) / grid
    i = int(np.argmin(obj))
    step = grid[min(i + 1, n - 1)] - grid[max(i - 1, 0)]
    return grid[i], step / 2 if 0 < i < n - 1 else step


def random_posterior_state(rng, N_o: int = 8, phi_min: float = 500.0**-2, phi_max: float = 50.0**-2):
    """One user row after an AMP sweep, with a positive EM numerator."""
    while True:
        varsigma = 10 ** rng.uniform(np.log10(phi_min / 5), np.log10(phi_max * 5))
        lam = rng.uniform(0.2, 0.9)
        phi_prior = 10 ** rng.uniform(np.log10(phi_min), np.log10(phi_max))
        noise = varsigma * 10 ** rng.uniform(-2, 0)
        x = (rng.normal(size=N_o) + 1j * rng.normal(size=N_o)) * math.sqrt(varsigma / 2)
        mu_x_hat = x + (rng.normal(size=N_o) + 1j * rng.normal(size=N_o)) * math.sqrt(noise / 2)
        post = bg.input_posterior(mu_x_hat, np.full(N_o, noise), bg.BGParams(lam, 0j, phi_prior))
        d2 = np.abs(post.mean) ** 2
        V = np.maximum(d2 - post.var, 0.0)
        if V.sum() > 0:
            return post, lam, phi_prior, V


def _row_state(post, lam, phi_prior, N_o):
    return amp.AmpState(
        x_mean=post.mean[None, :],
        x_var=post.var[None, :],
        s_hat=np.zeros((1, N_o), dtype=complex),
        lam=np.array([lam]),
        mu=np.zeros((1, N_o), dtype=complex),
        phi=np.full((1, N_o), phi_prior),
        psi=1.0,
        t=1,
        pi=post.pi[None, :],
        gamma=post.gamma[None, :],
        nu=post.nu[None, :],
    )


def em_grid_suite(n_cases: int = 100, seed: int = 0, grid_points: int = 100_000, em=None) -> dict:
    """Closed-form EM variance against grid minimization of its objective.

    Returns the number of cases (unclamped and clamped) where the closed form
    lies more than one grid step from the grid argmin.
    """
    em = em or amp.em_update
    rng = np.random.default_rng(seed)
    phi_min, phi_max = 500.0**-2, 50.0**-2
    lo, hi = phi_min / 10, phi_max * 10
    misses = {"conventional": 0, "geographical": 0, "ascent": 0, "cases": 0}
    while misses["cases"] < n_cases:
        post, lam, phi_prior, V = random_posterior_state(rng, phi_min=phi_min, phi_max=phi_max)
        N_o = V.size
        state = _row_state(post, lam, phi_prior, N_o)
        ratio_conv = em(state, amp.AmpConfig(variant="conventional", phi_min=phi_min, phi_max=phi_max)).phi[0, 0]
        if not lo <= ratio_conv <= hi:
            continue
        misses["cases"] += 1
        ref, step = grid_argmin(post.pi, V, lo, hi, grid_points)
        if abs(ratio_conv - ref) > step:
            misses["conventional"] += 1
        geo = em(state, amp.AmpConfig(variant="geographical", phi_min=phi_min, phi_max=phi_max)).phi[0, 0]
        ref_geo, step_geo = grid_argmin(post.pi, V, phi_min, phi_max, grid_points)
        if abs(geo - ref_geo) > step_geo:
            misses["geographical"] += 1
        if em_objective(geo, post.pi, V) > em_objective(phi_prior, post.pi, V) + 1e-9 * abs(em_objective(phi_prior, post.pi, V)):
            misses["ascent"] += 1
    return misses


# ---------------------------------------------------------- AMP transcription


def _mpc(z):
    return mpmath.mpc(complex(z).real, complex(z).imag)


def _mpf(x):
    return mpmath.mpf(float(x))


def _cn_mp(x, mu, var):
    return mpmath.exp(-abs(x - mu) ** 2 / var) / (mpmath.pi * var)


def literal_sweep(Y, A, psi, state: amp.AmpState, config: amp.AmpConfig, dps: int = 200) -> dict:
    """One AMP sweep and EM step transcribed line by line in mpmath.

    Lines keep their raw forms: plain densities in B3/B4 and the ratio forms
    of A5/A6. A1 uses the posterior variance. The EM step averages activity
    over ports, keeps or row-averages the mean, and shares one clamped
    variance per row. Variances are floored at PHI_FLOOR exactly where the
    implementation floors them.
    """
    with mpmath.workdps(dps):
        G, K = A.shape
        N_o = Y.shape[1]
        a = [[_mpc(A[g, k]) for k in range(K)] for g in range(G)]
        y = [[_mpc(Y[g, n]) for n in range(N_o)] for g in range(G)]
        x = [[_mpc(state.x_mean[k, n]) for n in range(N_o)] for k in range(K)]
        xv = [[_mpf(state.x_var[k, n]) for n in range(N_o)] for k in range(K)]
        sh = [[_mpc(state.s_hat[g, n]) for n in range(N_o)] for g in range(G)]
        lam = [_mpf(v) for v in state.lam]
        mu = [[_mpc(state.mu[k, n]) for n in range(N_o)] for k in range(K)]
        phi = [[_mpf(state.phi[k, n]) for n in range(N_o)] for k in range(K)]
        psi = _mpf(psi)
        floor = _mpf(bg.PHI_FLOOR)
        out = {key: [[None] * N_o for _ in range(G if key.startswith("A") and key in ("A1", "A2", "A3", "A4", "A5", "A6") else K)]
               for key in ("A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "B1", "B2", "B3", "B4", "A9", "A10")}
        for n in range(N_o):
            for g in range(G):
                pr = max(mpmath.fsum(abs(a[g][k]) ** 2 * xv[k][n] for k in range(K)), floor)
                mr = mpmath.fsum(a[g][k] * x[k][n] for k in range(K)) - pr * sh[g][n]
                mt = (pr * y[g][n] + psi * mr) / (pr + psi)
                vt = pr * psi / (pr + psi)
                out["A1"][g][n], out["A2"][g][n], out["A3"][g][n], out["A4"][g][n] = pr, mr, mt, vt
                out["A5"][g][n] = (pr - vt) / pr**2
                out["A6"][g][n] = (mt - mr) / pr
            for k in range(K):
                px = 1 / mpmath.fsum(abs(a[g][k]) ** 2 * out["A5"][g][n] for g in range(G))
                mx = x[k][n] + px * mpmath.fsum(mpmath.conj(a[g][k]) * out["A6"][g][n] for g in range(G))
                gam = (mx / px + mu[k][n] / phi[k][n]) / (1 / px + 1 / phi[k][n])
                nu = 1 / (1 / px + 1 / phi[k][n])
                beta = lam[k] * _cn_mp(mx, mu[k][n], px + phi[k][n])
                pi = 1 / (1 + (beta / ((1 - lam[k]) * _cn_mp(0, mx, px))) ** -1)
                out["A7"][k][n], out["A8"][k][n] = px, mx
                out["B1"][k][n], out["B2"][k][n], out["B3"][k][n], out["B4"][k][n] = gam, nu, beta, pi
                out["A9"][k][n] = pi * (nu + abs(gam) ** 2) - abs(pi * gam) ** 2
                out["A10"][k][n] = pi * gam
        e1, e2, e3 = [], [], []
        for k in range(K):
            spi = mpmath.fsum(out["B4"][k])
            lk = spi / N_o
            if config.mean_update == "row":
                mk = mpmath.fsum(out["B4"][k][n] * out["B1"][k][n] for n in range(N_o)) / (lk * N_o)
                e2.append([mk] * N_o)
            else:
                e2.append(list(mu[k]))
            V = [max(abs(out["A10"][k][n] - mu[k][n]) ** 2 - out["A9"][k][n], 0) for n in range(N_o)]
            ph = mpmath.fsum(V) / spi
            if config.clamped:
                ph = min(max(ph, _mpf(config.phi_min)), _mpf(config.phi_max))
            else:
                ph = max(ph, floor)
            e1.append(lk)
            e3.append([ph] * N_o)
        out["E1"], out["E2"], out["E3"] = e1, e2, e3
        return out


def transcription_suite(seed: int = 0, iterations: int = 3, config: amp.AmpConfig | None = None, sweep=None) -> dict:
    """Worst relative error per line over a few sweeps of a K=2, G=2, N_o=1 instance."""
    config = config or amp.AmpConfig(phi_min=1e-3, phi_max=10.0)
    sweep = sweep or amp.amp_iteration
    rng = np.random.default_rng(seed)
    G, K, N_o = 2, 2, 1
    A = (rng.normal(size=(G, K)) + 1j * rng.normal(size=(G, K))) / math.sqrt(2 * G)
    A /= np.linalg.norm(A, axis=0)
    codebook = PilotCodebook(A)
    X = np.array([[1.0 + 0.5j], [0.0]])
    psi = 0.05
    Y = A @ X + (rng.normal(size=(G, N_o)) + 1j * rng.normal(size=(G, N_o))) * math.sqrt(psi / 2)
    state = amp.init_state(Y, codebook, psi, config)
    # with G = K the initial activity rate saturates at 1, where the literal
    # activity ratio divides by 1 - lambda; start from an interior rate instead
    state = replace(state, lam=rng.uniform(0.2, 0.8, K))
    worst: dict[str, float] = {}
    for _ in range(iterations):
        ref = literal_sweep(Y, A, psi, state, config)
        state, lines = sweep(state, Y, codebook, psi, config, record=True)
        state, em_lines = amp.em_update(state, config, record=True)
        lines.update(em_lines)
        for key, rvals in ref.items():
            got = np.atleast_1d(np.asarray(lines[key]))
            rflat = _flatten(rvals)
            gflat = got.ravel()
            for gv, rv in zip(gflat, rflat):
                rv_c = complex(rv)
                err = abs(complex(gv) - rv_c) / abs(rv_c) if rv_c != 0 else abs(complex(gv))
                worst[key] = max(worst.get(key, 0.0), err)
    return worst


def _flatten(vals):
    if isinstance(vals, list):
        out = []
        for v in vals:
            out.extend(_flatten(v))
        return out
    return [vals]


# ------------------------------------------------------------------- SOMP


def somp_recovery_suite(
    n_seeds: int = 100, K: int = 100, G: int = 50, N_o: int = 8, K_a: int = 5, drop_last: bool = False
) -> dict:
    """Exact-support rate of SOMP on noiseless frames (``drop_last`` is a failure-injection hook)."""
    cfg = SceneConfig(K=K, G=G, N_o=N_o, K_a=K_a)
    exact = 0
    for seed in range(n_seeds):
        cb_ss, scene_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)
        codebook = build_codebook(G, K, cb_ss)
        scene = assemble_scene(cfg, scene_ss)
        Y = synthesize_rx(codebook, scene, 0.0, noise_ss)
        res = somp(Y, codebook, k_a=K_a)
        support = res.support[:-1] if drop_last else res.support
        exact += set(support) == scene.active_set
    return {"rate": exact / n_seeds, "trials": n_seeds}
