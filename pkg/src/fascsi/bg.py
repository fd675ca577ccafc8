"""Bernoulli-Gaussian prior and Gaussian-fusion posterior moments.

All functions are vectorized: arguments broadcast like numpy arrays, so the
same code serves scalar checks and the K x N_o sweeps inside AMP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit
from scipy.stats import norm

PHI_FLOOR = 1e-18

__all__ = [
    "PHI_FLOOR",
    "BGParams",
    "InputPosterior",
    "OutputPosterior",
    "cn_logpdf",
    "cn_pdf",
    "output_posterior",
    "input_posterior",
    "evidence",
    "prior_moments",
    "sparsity_init",
]


@dataclass
class BGParams:
    """Spike-and-slab prior (1 - lam) delta(x) + lam CN(x; mu, phi)."""

    lam: np.ndarray | float
    mu: np.ndarray | complex
    phi: np.ndarray | float

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if np.any(lam < 0) or np.any(lam > 1) or np.any(np.isnan(lam)):
            raise ValueError("activity probability must lie in [0, 1]")


@dataclass
class InputPosterior:
    pi: np.ndarray
    gamma: np.ndarray
    nu: np.ndarray
    log_beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray

    @property
    def beta(self) -> np.ndarray:
        return np.exp(self.log_beta)


@dataclass
class OutputPosterior:
    mean: np.ndarray
    var: np.ndarray


def cn_logpdf(x, mu, var):
    """log CN(x; mu, var) = -log(pi var) - |x - mu|^2 / var."""
    d = np.asarray(x) - np.asarray(mu)
    return -np.log(np.pi * var) - (d.real**2 + d.imag**2) / var


def cn_pdf(x, mu, var):
    return np.exp(cn_logpdf(x, mu, var))


def output_posterior(y, mu_r, phi_r, psi) -> OutputPosterior:
    """Posterior of r given y ~ CN(r, psi) and the AMP belief r ~ CN(mu_r, phi_r)."""
    phi_r = np.asarray(phi_r, dtype=float)
    if np.any(phi_r <= 0) or np.any(np.asarray(psi) <= 0):
        raise ValueError("variances must be positive")
    s = phi_r + psi
    return OutputPosterior((phi_r * y + psi * mu_r) / s, phi_r * psi / s)


def input_posterior(mu_x_hat, phi_x_hat, prior: BGParams) -> InputPosterior:
    """BG posterior of x given the pseudo-observation mu_x_hat = x + CN(0, phi_x_hat).

    The activity likelihood ratio is evaluated in the log domain so that
    neither term underflows at high SNR.
    """
    phi_x_hat = np.asarray(phi_x_hat, dtype=float)
    if np.any(phi_x_hat <= 0):
        raise ValueError("phi_x_hat must be positive")
    lam = np.asarray(prior.lam, dtype=float)
    mu = prior.mu
    phi = np.maximum(prior.phi, PHI_FLOOR)

    nu = 1.0 / (1.0 / phi_x_hat + 1.0 / phi)
    gamma = (mu_x_hat / phi_x_hat + mu / phi) * nu
    with np.errstate(divide="ignore"):
        log_beta = np.log(lam) + cn_logpdf(mu_x_hat, mu, phi_x_hat + phi)
        log_alpha = np.log1p(-lam) + cn_logpdf(0.0, mu_x_hat, phi_x_hat)
    pi = expit(log_beta - log_alpha)
    g2 = gamma.real**2 + gamma.imag**2
    mean = pi * gamma
    # pi (nu + |g|^2) - |pi g|^2 rearranged so it cannot go negative
    var = pi * nu + pi * (1.0 - pi) * g2
    return InputPosterior(pi, gamma, nu, log_beta, mean, var)


def evidence(mu_x_hat, phi_x_hat, prior: BGParams):
    """Normalizer zeta = int p_X(x) CN(x; mu_x_hat, phi_x_hat) dx in closed form."""
    lam = np.asarray(prior.lam, dtype=float)
    return (1.0 - lam) * cn_pdf(0.0, mu_x_hat, phi_x_hat) + lam * cn_pdf(
        0.0, np.asarray(mu_x_hat) - prior.mu, phi_x_hat + np.asarray(prior.phi)
    )


def prior_moments(prior: BGParams):
    """Mean and variance of the full BG prior."""
    lam = np.asarray(prior.lam, dtype=float)
    mu = np.asarray(prior.mu)
    mean = lam * mu
    m2 = mu.real**2 + mu.imag**2
    return mean, lam * (np.asarray(prior.phi) + m2) - np.abs(mean) ** 2


def _transition_ratio(a, G: int, K: int):
    c = (1 + a**2) * norm.cdf(-a) - a * norm.pdf(a)
    return (1 - 2 * K / G * c) / (1 + a**2 - 2 * c)


def sparsity_init(G: int, K: int, tol: float = 1e-8) -> float:
    """Initial activity rate: (G/K) times the maximized sparsity-undersampling ratio over a in (0, 10]."""
    if G < 1 or K < 1:
        raise ValueError("G and K must be positive")
    res = minimize_scalar(lambda a: -_transition_ratio(a, G, K), bounds=(0.0, 10.0), method="bounded", options={"xatol": tol})
    lam = G / K * _transition_ratio(res.x, G, K)
    return float(np.clip(lam, np.finfo(float).tiny, 1.0))
