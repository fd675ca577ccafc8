"""Fluid-antenna uplink channel generator.

Pilot codebooks, user geometry, geometric multipath fading over ``N_o`` equally
spaced ports, sporadic activity and the noisy received pilot block
``Y = A X + Z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SceneConfig",
    "UserGeometry",
    "Geometry",
    "PilotCodebook",
    "ChannelScene",
    "build_codebook",
    "steering_vector",
    "steering_matrix",
    "draw_geometry",
    "small_scale",
    "lsfc",
    "assemble_scene",
    "noise_variance_for_snr",
    "synthesize_rx",
]


@dataclass(frozen=True)
class SceneConfig:
    """System configuration. Defaults follow the reference deployment."""

    K: int = 1000
    K_a: int = 150
    G: int = 400
    N_o: int = 8
    M: int = 64
    L_s: int = 3
    K_r: float = 2.0
    d_ref: float = 50.0
    d_max: float = 500.0
    theta_min: float = 30.0
    theta_max: float = 150.0
    path_loss_exponent: float = 2.0
    # 0 draws AoAs from the continuum; n > 1 draws them from n equally spaced angles
    aoa_samples: int = 0
    # "realized": mean LSFC of the active users of the trial; "expected": E[f(d)]
    snr_reference: str = "realized"

    def __post_init__(self):
        if self.K < 1 or self.G < 1 or self.N_o < 1 or self.L_s < 1:
            raise ValueError("K, G, N_o and L_s must be positive")
        if not 0 <= self.K_a <= self.K:
            raise ValueError(f"K_a={self.K_a} must lie in [0, K={self.K}]")
        if not 0 < self.d_ref < self.d_max:
            raise ValueError("need 0 < d_ref < d_max")
        if not self.theta_min < self.theta_max:
            raise ValueError("need theta_min < theta_max")
        if self.K_r < 0:
            raise ValueError("Rician factor must be non-negative")
        if self.K_r > 0 and self.L_s < 2:
            raise ValueError("a Rician channel needs L_s >= 2 (one LOS and one NLOS path)")
        if self.aoa_samples < 0 or self.aoa_samples == 1:
            raise ValueError("aoa_samples must be 0 (continuous) or >= 2")
        if self.snr_reference not in ("realized", "expected"):
            raise ValueError("snr_reference must be 'realized' or 'expected'")

    @property
    def omega(self) -> float:
        # E||s_k||^2 = N_o with unit-norm steering vectors forces Omega = N_o
        return float(self.N_o)

    @property
    def phi_min(self) -> float:
        return lsfc(self.d_max, self.path_loss_exponent)

    @property
    def phi_max(self) -> float:
        return lsfc(self.d_ref, self.path_loss_exponent)

    def expected_lsfc(self) -> float:
        """E[f(d)] for d uniform on [d_ref, d_max]."""
        e, a, b = self.path_loss_exponent, self.d_ref, self.d_max
        if np.isclose(e, 1.0):
            integral = np.log(b / a)
        else:
            integral = (b ** (1 - e) - a ** (1 - e)) / (1 - e)
        return float(integral / (b - a))


@dataclass(frozen=True)
class UserGeometry:
    distance: float
    aoas: np.ndarray
    path_gains: np.ndarray
    los_phase: float


@dataclass
class Geometry:
    """Geometry of all K users stored column-wise; indexing yields a UserGeometry."""

    distance: np.ndarray  # (K,)
    aoas: np.ndarray  # (K, L_s) degrees
    path_gains: np.ndarray  # (K, L_s) complex
    los_phase: np.ndarray  # (K,)

    def __len__(self) -> int:
        return self.distance.shape[0]

    def __getitem__(self, k: int) -> UserGeometry:
        return UserGeometry(
            float(self.distance[k]),
            self.aoas[k].copy(),
            self.path_gains[k].copy(),
            float(self.los_phase[k]),
        )

    def __iter__(self):
        return (self[k] for k in range(len(self)))


@dataclass
class PilotCodebook:
    A: np.ndarray  # (G, K) complex
    _abs2: np.ndarray | None = field(default=None, repr=False)

    @property
    def G(self) -> int:
        return self.A.shape[0]

    @property
    def K(self) -> int:
        return self.A.shape[1]

    @property
    def abs2(self) -> np.ndarray:
        """Entrywise |A[g,k]|^2, cached."""
        if self._abs2 is None:
            self._abs2 = self.A.real**2 + self.A.imag**2
        return self._abs2


@dataclass
class ChannelScene:
    geometry: Geometry
    H: np.ndarray  # (K, N_o)
    activity: np.ndarray  # sorted active indices
    X: np.ndarray  # (K, N_o), rows outside activity are zero
    lsfc: np.ndarray  # (K,)

    @property
    def active_set(self) -> set[int]:
        return set(int(k) for k in self.activity)


def build_codebook(G: int, K: int, rng_seed, normalize: bool = True) -> PilotCodebook:
    """Draw a G x K codebook with CN(0, 1/G) entries and unit-norm columns.

    With ``normalize=False`` the raw Gaussian draw is returned (column norms
    then concentrate around 1 with variance 1/G).
    """
    if G < 1 or K < 1:
        raise ValueError(f"codebook dimensions must be positive, got G={G}, K={K}")
    rng = np.random.default_rng(rng_seed)
    A = (rng.standard_normal((G, K)) + 1j * rng.standard_normal((G, K))) * np.sqrt(0.5 / G)
    if normalize:
        A /= np.linalg.norm(A, axis=0, keepdims=True)
    return PilotCodebook(A)


def _phase_step(N_o: int, M: int) -> float:
    # 2*pi*W/((N_o-1)*lambda) with W/lambda = (M-1)/2; no aperture for one port
    if N_o == 1:
        return 0.0
    return 2.0 * np.pi * (M - 1) / 2.0 / (N_o - 1)


def steering_matrix(thetas, N_o: int, M: int) -> np.ndarray:
    """Steering vectors for an array of angles (degrees); shape thetas.shape + (N_o,)."""
    if N_o < 1:
        raise ValueError("N_o must be positive")
    thetas = np.asarray(thetas, dtype=float)
    n = np.arange(N_o)
    phase = _phase_step(N_o, M) * np.cos(np.deg2rad(thetas))[..., None] * n
    return np.exp(-1j * phase) / np.sqrt(N_o)


def steering_vector(theta: float, N_o: int, M: int) -> np.ndarray:
    """Normalized steering response of the N_o-port array at AoA ``theta`` (degrees)."""
    return steering_matrix(theta, N_o, M)


def _draw_aoas(config: SceneConfig, rng, shape) -> np.ndarray:
    if config.aoa_samples:
        grid = np.linspace(config.theta_min, config.theta_max, config.aoa_samples)
        return grid[rng.integers(0, config.aoa_samples, size=shape)]
    return rng.uniform(config.theta_min, config.theta_max, size=shape)


def _cn(rng, shape, var) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(var / 2.0)


def path_powers(config: SceneConfig) -> np.ndarray:
    """Configured E|sigma_l|^2 per path (LOS first when K_r > 0)."""
    omega, K_r, L_s = config.omega, config.K_r, config.L_s
    if K_r > 0:
        los = K_r * omega / (K_r + 1)
        nlos = omega / ((K_r + 1) * (L_s - 1))
        return np.array([los] + [nlos] * (L_s - 1))
    return np.full(L_s, omega / L_s)


def draw_geometry(config: SceneConfig, rng_seed) -> Geometry:
    """Distances, AoAs and Rician/Rayleigh path gains for all K users."""
    rng = np.random.default_rng(rng_seed)
    K, L_s = config.K, config.L_s
    distance = rng.uniform(config.d_ref, config.d_max, size=K)
    aoas = _draw_aoas(config, rng, (K, L_s))
    los_phase = rng.uniform(0.0, 2.0 * np.pi, size=K)
    powers = path_powers(config)
    if config.K_r > 0:
        gains = np.empty((K, L_s), dtype=complex)
        gains[:, 0] = np.sqrt(powers[0]) * np.exp(1j * los_phase)
        gains[:, 1:] = _cn(rng, (K, L_s - 1), powers[1])
    else:
        gains = _cn(rng, (K, L_s), powers[0])
    return Geometry(distance, aoas, gains, los_phase)


def small_scale(geom: UserGeometry | Geometry, N_o: int, M: int) -> np.ndarray:
    """Multipath fading s_k = sum_l sigma_l * steering(theta_l).

    Accepts one user's geometry (returns a length-N_o vector) or the full
    Geometry container (returns K x N_o).
    """
    S = steering_matrix(geom.aoas, N_o, M)  # (..., L_s, N_o)
    return np.einsum("...l,...ln->...n", geom.path_gains, S)


def lsfc(d, exponent: float = 2.0):
    """Large-scale fading coefficient f(d) = d^(-exponent)."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr <= 0):
        raise ValueError("distance must be positive")
    out = d_arr ** (-exponent)
    return float(out) if out.ndim == 0 else out


def assemble_scene(config: SceneConfig, rng_seed) -> ChannelScene:
    """Full ground truth for one frame: geometry, channels, activity, row-sparse X."""
    ss = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
    geo_ss, act_ss = ss.spawn(2)
    geometry = draw_geometry(config, geo_ss)
    rng = np.random.default_rng(act_ss)
    activity = np.sort(rng.choice(config.K, size=config.K_a, replace=False))
    varsigma = lsfc(geometry.distance, config.path_loss_exponent)
    H = np.sqrt(varsigma)[:, None] * small_scale(geometry, config.N_o, config.M)
    X = np.zeros_like(H)
    X[activity] = H[activity]
    return ChannelScene(geometry, H, activity, X, varsigma)


def noise_variance_for_snr(snr_linear: float, mean_lsfc: float, G: int) -> float:
    """Noise variance psi giving received SNR = mean_lsfc / (G psi)."""
    if snr_linear <= 0 or mean_lsfc <= 0:
        raise ValueError("snr and mean LSFC must be positive")
    return mean_lsfc / (G * snr_linear)


def synthesize_rx(codebook: PilotCodebook, scene: ChannelScene, psi: float, rng_seed) -> np.ndarray:
    """Received pilot block Y = A X + Z with Z ~ CN(0, psi) i.i.d."""
    A, X = codebook.A, scene.X
    if A.shape[1] != X.shape[0]:
        raise ValueError(f"codebook has {A.shape[1]} columns but X has {X.shape[0]} rows")
    if psi < 0:
        raise ValueError("noise variance must be non-negative")
    Y = A @ X
    if psi > 0:
        rng = np.random.default_rng(rng_seed)
        Y = Y + _cn(rng, Y.shape, psi)
    return Y
