"""EM-AMP estimator for row-sparse multi-port channels.

The AMP sweep follows the usual output/input split: lines A1-A8 form the
linear step and the output-channel fusion, B1-B4 with A9-A10 the
Bernoulli-Gaussian denoiser, and E1-E3 the EM update of the prior. The
geographical variant clamps each user's prior variance to the range of the
large-scale fading law over the service area.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .bg import PHI_FLOOR, BGParams, input_posterior, output_posterior, prior_moments, sparsity_init
from .channel import PilotCodebook

logger = logging.getLogger(__name__)

__all__ = [
    "AmpConfig",
    "AmpState",
    "EstimateResult",
    "AmpDivergenceError",
    "init_state",
    "amp_iteration",
    "em_update",
    "run",
    "detect_activity",
    "macs_per_iteration",
    "complexity_formula",
]

VARIANTS = ("conventional", "geographical")


class AmpDivergenceError(FloatingPointError):
    """Raised when a line of the sweep produces a non-finite value."""

    def __init__(self, line: str, t: int):
        super().__init__(f"non-finite value produced by line {line} at iteration {t}")
        self.line = line
        self.t = t


@dataclass(frozen=True)
class AmpConfig:
    t_max: int = 15
    variant: str = "geographical"
    # f(d_max) and f(d_ref) of the reference deployment
    phi_min: float = 500.0**-2
    phi_max: float = 50.0**-2
    conv_tol: float = 1e-6
    damping: float = 1.0
    activity_rule: str = "top_ka"
    threshold: float = 0.5
    # "ports": lambda_k = mean_n pi_kn; "users": sum_n pi_kn / K as printed in E1
    lambda_divisor: str = "ports"
    # "fixed": prior mean stays at its zero initialization (zero-mean channels);
    # "row": weighted mean of gamma over the user's ports; "printed": sum over users / (lambda_k K)
    mean_update: str = "fixed"
    # "row": one variance per user (closed form over ports); "entry": per-(k,n) E3 form
    variance_sharing: str = "row"
    # "printed": |x~ - mu|^2 - phi~ ; "second_moment": |x~ - mu|^2 + phi~
    v_form: str = "printed"

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if not 0 < self.phi_min <= self.phi_max:
            raise ValueError("need 0 < phi_min <= phi_max")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.activity_rule not in ("top_ka", "threshold"):
            raise ValueError("activity_rule must be 'top_ka' or 'threshold'")
        if self.lambda_divisor not in ("ports", "users"):
            raise ValueError("lambda_divisor must be 'ports' or 'users'")
        if self.mean_update not in ("fixed", "row", "printed"):
            raise ValueError("mean_update must be 'fixed', 'row' or 'printed'")
        if self.variance_sharing not in ("row", "entry"):
            raise ValueError("variance_sharing must be 'row' or 'entry'")
        if self.v_form not in ("printed", "second_moment"):
            raise ValueError("v_form must be 'printed' or 'second_moment'")

    @property
    def clamped(self) -> bool:
        return self.variant == "geographical"


@dataclass
class AmpState:
    x_mean: np.ndarray  # (K, N_o) complex
    x_var: np.ndarray  # (K, N_o)
    s_hat: np.ndarray  # (G, N_o) complex
    lam: np.ndarray  # (K,)
    mu: np.ndarray  # (K, N_o) complex
    phi: np.ndarray  # (K, N_o)
    psi: float
    t: int = 0
    # denoiser outputs of the last sweep, consumed by the EM step
    pi: np.ndarray | None = None
    gamma: np.ndarray | None = None
    nu: np.ndarray | None = None

    @property
    def prior(self) -> BGParams:
        return BGParams(self.lam[:, None], self.mu, self.phi)


@dataclass
class EstimateResult:
    x_hat: np.ndarray
    lam: np.ndarray
    detected: np.ndarray
    iterations_used: int
    nmse_trace: list[float]
    mac_count: int
    mac_per_iteration: int
    trace: list[dict] = field(default_factory=list)


def _check(line: str, t: int, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise AmpDivergenceError(line, t)


# real multiplies charged per entry for the elementwise lines
_OUTPUT_OPS = 5  # Onsager product (A2), fusion (A3/A4), residual scaling (A6)
_INPUT_OPS = 10  # A8 scaling, B1-B4, A9-A10


def macs_per_iteration(K: int, G: int, N_o: int, damping: float = 1.0) -> int:
    """Multiply count of one AMP sweep plus one EM step."""
    matmul = 4 * K * G * N_o  # A1, A2, A7, A8 products
    elementwise = _OUTPUT_OPS * G * N_o + _INPUT_OPS * K * N_o
    em = 3 * K * N_o + 2 * K
    damp = 4 * K * N_o if damping < 1 else 0
    return matmul + elementwise + em + damp


def complexity_formula(K: int, G: int, N_o: int) -> int:
    return 4 * K * G * N_o + 3 * K * N_o + 2 * K


def _clamp(phi: np.ndarray, config: AmpConfig) -> np.ndarray:
    if config.clamped:
        return np.clip(phi, config.phi_min, config.phi_max)
    return np.maximum(phi, PHI_FLOOR)


def init_state(Y: np.ndarray, codebook: PilotCodebook, psi: float, config: AmpConfig) -> AmpState:
    """Initial prior and posterior moments before the first sweep."""
    G, K = codebook.A.shape
    if Y.shape[0] != G:
        raise ValueError(f"Y has {Y.shape[0]} rows but the codebook has G={G}")
    if psi <= 0:
        raise ValueError("noise variance must be positive")
    N_o = Y.shape[1]
    lam1 = sparsity_init(G, K)
    energy = float(np.sum(Y.real**2 + Y.imag**2)) - G * N_o * psi
    scale = float(np.sum(codebook.abs2)) * lam1 * N_o
    if energy > 0:
        phi1 = max(energy / scale, PHI_FLOOR)
    else:
        logger.debug("received energy below the noise floor; prior variance falls back to phi_min")
        phi1 = config.phi_min
    lam = np.full(K, lam1)
    mu = np.zeros((K, N_o), dtype=complex)
    phi = _clamp(np.full((K, N_o), phi1), config)
    mean, var = prior_moments(BGParams(lam[:, None], mu, phi))
    return AmpState(
        x_mean=np.asarray(mean, dtype=complex),
        x_var=np.asarray(var, dtype=float),
        s_hat=np.zeros((G, N_o), dtype=complex),
        lam=lam,
        mu=mu,
        phi=phi,
        psi=psi,
    )


def amp_iteration(
    state: AmpState,
    Y: np.ndarray,
    codebook: PilotCodebook,
    psi: float,
    config: AmpConfig | None = None,
    record: bool = False,
):
    """One AMP sweep (A1-A10 with B1-B4).

    Returns the new state, and when ``record`` is set also a dict mapping each
    line label to the value it produced.
    """
    config = config or AmpConfig()
    A, A2 = codebook.A, codebook.abs2
    t = state.t + 1

    phi_r_hat = np.maximum(A2 @ state.x_var, PHI_FLOOR)  # A1
    _check("A1", t, phi_r_hat)
    mu_r_hat = A @ state.x_mean - phi_r_hat * state.s_hat  # A2
    _check("A2", t, mu_r_hat)
    out = output_posterior(Y, mu_r_hat, phi_r_hat, psi)  # A3, A4
    _check("A3", t, out.mean)
    _check("A4", t, out.var)
    # A5 and A6 in the cancellation-free forms 1/(phi_r + psi) and (y - mu_r)/(phi_r + psi)
    phi_s = 1.0 / (phi_r_hat + psi)  # A5
    s_hat = (Y - mu_r_hat) * phi_s  # A6
    _check("A6", t, s_hat)
    phi_x_hat = 1.0 / np.maximum(A2.T @ phi_s, PHI_FLOOR)  # A7
    phi_x_hat = np.maximum(phi_x_hat, PHI_FLOOR)
    _check("A7", t, phi_x_hat)
    mu_x_hat = state.x_mean + phi_x_hat * (A.conj().T @ s_hat)  # A8
    _check("A8", t, mu_x_hat)

    post = input_posterior(mu_x_hat, phi_x_hat, state.prior)  # B1-B4, A9, A10
    _check("B4", t, post.pi)
    x_mean, x_var = post.mean, post.var
    if config.damping < 1:
        d = config.damping
        x_mean = d * x_mean + (1 - d) * state.x_mean
        x_var = d * x_var + (1 - d) * state.x_var
    _check("A9", t, x_var)
    _check("A10", t, x_mean)

    new = replace(
        state, x_mean=x_mean, x_var=x_var, s_hat=s_hat, t=t, pi=post.pi, gamma=post.gamma, nu=post.nu
    )
    if not record:
        return new
    lines = {
        "A1": phi_r_hat,
        "A2": mu_r_hat,
        "A3": out.mean,
        "A4": out.var,
        "A5": phi_s,
        "A6": s_hat,
        "A7": phi_x_hat,
        "A8": mu_x_hat,
        "B1": post.gamma,
        "B2": post.nu,
        "B3": post.beta,
        "B4": post.pi,
        "A9": x_var,
        "A10": x_mean,
    }
    return new, lines


def em_update(state: AmpState, config: AmpConfig | None = None, record: bool = False):
    """EM refit of (lambda, mu, phi) from the last sweep's posterior."""
    config = config or AmpConfig()
    if state.pi is None:
        raise ValueError("em_update needs a completed AMP sweep")
    pi, gamma = state.pi, state.gamma
    K, N_o = pi.shape
    sum_pi = pi.sum(axis=1)

    divisor = N_o if config.lambda_divisor == "ports" else K
    lam = np.clip(sum_pi / divisor, 0.0, 1.0)  # E1

    d = state.x_mean - state.mu  # uses the prior mean of this iteration
    bias2 = d.real**2 + d.imag**2
    if config.v_form == "printed":
        V = np.maximum(bias2 - state.x_var, 0.0)
    else:
        V = bias2 + state.x_var

    pg = pi * gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        if config.mean_update == "fixed":
            mu = state.mu
        elif config.mean_update == "row":
            mu_row = pg.sum(axis=1) / (lam * divisor)
            mu = np.where((sum_pi > 0)[:, None], mu_row[:, None], state.mu)  # E2
        else:
            mu_col = pg.sum(axis=0)[None, :] / (lam[:, None] * K)
            mu = np.where(lam[:, None] > 0, mu_col, state.mu)
        if config.variance_sharing == "row":
            ratio = V.sum(axis=1) / sum_pi
            phi = np.where((sum_pi > 0)[:, None], ratio[:, None], state.phi)  # E3
        else:
            phi = V
    phi = _clamp(phi, config)
    _check("E2", state.t, mu)
    _check("E3", state.t, phi)

    new = replace(state, lam=lam, mu=np.broadcast_to(mu, (K, N_o)).astype(complex), phi=phi)
    if not record:
        return new
    return new, {"E1": lam, "E2": new.mu, "E3": phi, "V": V}


def detect_activity(lam, rule: str = "top_ka", k_a: int | None = None, threshold: float = 0.5) -> np.ndarray:
    """Estimated active set from per-user activity probabilities (sorted indices)."""
    lam = np.asarray(lam, dtype=float)
    if rule == "top_ka":
        if k_a is None:
            raise ValueError("top_ka rule needs k_a")
        if not 0 <= k_a <= lam.size:
            raise ValueError(f"k_a={k_a} exceeds the number of users {lam.size}")
        # stable sort of -lam breaks ties towards the lower index
        return np.sort(np.argsort(-lam, kind="stable")[:k_a])
    if rule == "threshold":
        return np.flatnonzero(lam > threshold)
    raise ValueError(f"unknown activity rule {rule!r}")


def run(
    Y: np.ndarray,
    codebook: PilotCodebook,
    psi: float,
    config: AmpConfig | None = None,
    k_a: int | None = None,
    x_true: np.ndarray | None = None,
    trace_fn=None,
) -> EstimateResult:
    """Alternate AMP sweeps and EM steps until ``t_max`` or convergence.

    The per-iteration trace holds ``trace_fn(state)`` when given, else the
    NMSE against ``x_true`` when given, else the relative change between
    consecutive iterates.
    """
    config = config or AmpConfig()
    K = codebook.K
    G, N_o = Y.shape
    state = init_state(Y, codebook, psi, config)
    per_iter = macs_per_iteration(K, G, N_o, config.damping)
    ref = None if x_true is None else float(np.sum(np.abs(x_true) ** 2))

    nmse_trace, trace = [], []
    macs = 0
    for t in range(1, config.t_max + 1):
        prev = state.x_mean
        state = amp_iteration(state, Y, codebook, psi, config)
        state = em_update(state, config)
        macs += per_iter

        prev_energy = float(np.sum(np.abs(prev) ** 2))
        change = float(np.sum(np.abs(state.x_mean - prev) ** 2))
        rel_change = change / prev_energy if prev_energy > 0 else np.inf
        if trace_fn is not None:
            nmse_trace.append(float(trace_fn(state)))
        elif ref is not None:
            err = float(np.sum(np.abs(state.x_mean - x_true) ** 2))
            nmse_trace.append(err / ref if ref > 0 else err)
        else:
            nmse_trace.append(rel_change)
        trace.append(
            {
                "t": t,
                "nmse_proxy": nmse_trace[-1],
                "mean_lambda": float(state.lam.mean()),
                "mean_phi": float(state.phi.mean()),
                "mac_cumulative": macs,
            }
        )
        if rel_change < config.conv_tol:
            break

    detected = detect_activity(state.lam, config.activity_rule, k_a, config.threshold)
    return EstimateResult(
        x_hat=state.x_mean,
        lam=state.lam,
        detected=detected,
        iterations_used=state.t,
        nmse_trace=nmse_trace,
        mac_count=macs,
        mac_per_iteration=per_iter,
        trace=trace,
    )
