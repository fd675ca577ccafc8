"""Greedy comparison estimators: SOMP detection, LS and AoA-dictionary channel estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .channel import PilotCodebook, steering_matrix

__all__ = [
    "SompResult",
    "LsEstimate",
    "AoaDictionary",
    "somp",
    "ls_estimate",
    "build_aoa_dictionary",
    "aoa_codebook_estimate",
]


@dataclass
class SompResult:
    support: list[int]
    residual_norms: list[float]
    mac_count: int = 0
    rank_deficient: bool = False


@dataclass
class LsEstimate:
    x_hat: np.ndarray
    rank_deficient: bool = False
    mac_count: int = 0


@dataclass
class AoaDictionary:
    D: np.ndarray  # (N_o, N_s)
    angles: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def N_s(self) -> int:
        return self.D.shape[1]


def somp(
    Y: np.ndarray,
    codebook: PilotCodebook,
    k_a: int | None = None,
    residual_tol: float | None = None,
) -> SompResult:
    """Simultaneous OMP over the N_o measurement columns of Y.

    Exactly one stopping rule is used: ``k_a`` selects that many users,
    ``residual_tol`` stops once the residual Frobenius norm is at or below it.
    The residual is refreshed by orthogonal projection onto the selected
    columns (kept as an orthonormal basis).
    """
    if (k_a is None) == (residual_tol is None):
        raise ValueError("give exactly one of k_a or residual_tol")
    A = codebook.A
    G, K = A.shape
    N_o = Y.shape[1]
    if k_a is not None and not 0 <= k_a <= G:
        raise ValueError(f"k_a={k_a} must not exceed the pilot length G={G}")
    max_steps = k_a if k_a is not None else min(G, K)

    R = np.array(Y, dtype=complex)
    Q = np.empty((G, 0), dtype=complex)
    support: list[int] = []
    norms: list[float] = []
    chosen = np.zeros(K, dtype=bool)
    macs = 0
    res = float(np.linalg.norm(R))
    rank_deficient = False
    while len(support) < max_steps:
        if residual_tol is not None and res <= residual_tol:
            break
        C = A.conj().T @ R
        score = np.sum(C.real**2 + C.imag**2, axis=1)
        score[chosen] = -1.0
        k = int(np.argmax(score))  # first maximum: ties go to the lower index
        macs += K * G * N_o + K * N_o

        a = A[:, k]
        v = a.copy()
        for _ in range(2):  # re-orthogonalize once for stability
            v -= Q @ (Q.conj().T @ v)
        macs += 4 * G * Q.shape[1]
        nv = np.linalg.norm(v)
        if nv <= 1e-10 * np.linalg.norm(a):
            rank_deficient = True
            break
        q = v / nv
        Q = np.column_stack([Q, q])
        R -= np.outer(q, q.conj() @ R)
        macs += 2 * G * N_o + G
        chosen[k] = True
        support.append(k)
        res = float(np.linalg.norm(R))
        norms.append(res)
    return SompResult(support, norms, macs, rank_deficient)


def _ls_rows(B: np.ndarray, Y: np.ndarray):
    """Min-norm LS solution of B Z = Y via QR, falling back to SVD on rank loss."""
    G, S = B.shape
    N_o = Y.shape[1]
    Qf, Rf = np.linalg.qr(B)
    diag = np.abs(np.diag(Rf))
    macs = G * S * S + G * S * N_o + S * S * N_o // 2
    if S and diag.min() > 1e-10 * max(diag.max(), 1.0) and S <= G:
        return solve_triangular(Rf, Qf.conj().T @ Y), False, macs
    Z, *_ = np.linalg.lstsq(B, Y, rcond=None)
    return Z, True, macs


def ls_estimate(Y: np.ndarray, codebook: PilotCodebook, support) -> LsEstimate:
    """Least-squares rows on ``support``; all other rows are zero."""
    support = np.asarray(list(support), dtype=int)
    K = codebook.K
    X = np.zeros((K, Y.shape[1]), dtype=complex)
    if support.size == 0:
        return LsEstimate(X)
    if support.size > codebook.G:
        raise ValueError("support larger than the pilot length")
    Z, deficient, macs = _ls_rows(codebook.A[:, support], Y)
    X[support] = Z
    return LsEstimate(X, deficient, macs)


def build_aoa_dictionary(
    N_s: int = 121, N_o: int = 8, M: int = 64, theta_min: float = 30.0, theta_max: float = 150.0
) -> AoaDictionary:
    """Steering vectors on N_s equally spaced angles over [theta_min, theta_max]."""
    if N_s < 2:
        raise ValueError("N_s must be at least 2")
    angles = np.linspace(theta_min, theta_max, N_s)
    return AoaDictionary(steering_matrix(angles, N_o, M).T, angles)


def _angular_pursuit(h: np.ndarray, D: np.ndarray, sparsity: int):
    """Greedy selection of ``sparsity`` atoms for one row, then LS on the picked atoms."""
    N_o, N_s = D.shape
    picked: list[int] = []
    free = np.ones(N_s, dtype=bool)
    r = h
    c = np.zeros(0, dtype=complex)
    macs = 0
    for _ in range(min(sparsity, N_s)):
        corr = np.abs(D.conj().T @ r)
        corr[~free] = -1.0
        j = int(np.argmax(corr))
        picked.append(j)
        free[j] = False
        Dp = D[:, picked]
        c, *_ = np.linalg.lstsq(Dp, h, rcond=None)
        r = h - Dp @ c
        p = len(picked)
        macs += N_s * N_o + N_o * p * p + N_o * p
    return D[:, picked] @ c, macs


def aoa_codebook_estimate(
    Y: np.ndarray,
    codebook: PilotCodebook,
    support,
    dictionary: AoaDictionary,
    sparsity: int = 3,
) -> LsEstimate:
    """LS rows on the support, each re-synthesized from ``sparsity`` dictionary angles."""
    if sparsity > dictionary.N_s:
        raise ValueError("sparsity exceeds the dictionary size")
    ls = ls_estimate(Y, codebook, support)
    X = np.zeros_like(ls.x_hat)
    macs = ls.mac_count
    for k in np.asarray(list(support), dtype=int):
        X[k], m = _angular_pursuit(ls.x_hat[k], dictionary.D, sparsity)
        macs += m
    return LsEstimate(X, ls.rank_deficient, macs)
