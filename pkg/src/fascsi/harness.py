"""Metrics, seeded trials and the three Monte-Carlo experiments."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import amp
from .amp import AmpConfig, AmpDivergenceError
from .baselines import aoa_codebook_estimate, build_aoa_dictionary, ls_estimate, somp
from .channel import (
    SceneConfig,
    assemble_scene,
    build_codebook,
    noise_variance_for_snr,
    synthesize_rx,
)

logger = logging.getLogger(__name__)

ALGORITHMS = ("em_amp_geo", "em_amp_conventional", "somp_ls", "somp_aoa")
AMP_ALGORITHMS = ("em_amp_geo", "em_amp_conventional")

EXPERIMENTS = {
    "convergence": {
        "scene": {"N_o": 8, "K_a": 10},
        "snr_db": -14.0,
        "grid_key": "K_r",
        "grid": [0.0, 3.0],
        "algorithms": list(AMP_ALGORITHMS),
    },
    "vs_snr": {
        "scene": {"N_o": 8, "K_a": 150},
        "grid_key": "snr_db",
        "grid": [float(s) for s in range(-20, 9, 2)],
        "algorithms": list(ALGORITHMS),
    },
    "vs_ports": {
        "scene": {"K_a": 150},
        "snr_db": 5.0,
        "grid_key": "N_o",
        "grid": [2, 4, 6, 8, 16, 32, 62],
        "algorithms": list(ALGORITHMS),
    },
}


@dataclass(frozen=True)
class TrialSpec:
    scene: SceneConfig
    snr_db: float
    algorithm: str
    amp: AmpConfig = AmpConfig()
    seed: int = 0
    N_s: int = 121
    aoa_sparsity: int | None = None


@dataclass
class MetricRecord:
    algorithm: str
    seed: int
    ade: float
    nmse: float | None
    detected_count: int
    mac_count: int
    wall_time: float
    iterations: int = 0
    nmse_trace: list[float] = field(default_factory=list)
    grid_value: float | int | None = None
    flags: str = ""

    @property
    def nmse_db(self) -> float | None:
        if self.nmse is None:
            return None
        return 10 * math.log10(self.nmse) if self.nmse > 0 else -math.inf

    def same_outcome(self, other: MetricRecord) -> bool:
        """Equality on every field except wall time."""
        skip = {"wall_time"}
        return all(getattr(self, f.name) == getattr(other, f.name) for f in fields(self) if f.name not in skip)


def ade(true_set, est_set, k_a: int) -> float:
    """Activity detection error 1 - |A & A~| / K_a."""
    if k_a <= 0:
        raise ValueError("k_a must be positive")
    hits = len(set(int(k) for k in true_set) & set(int(k) for k in est_set))
    return 1.0 - hits / k_a


def nmse(H_true: np.ndarray, H_est: np.ndarray, users, per_user: bool = False) -> float | None:
    """Channel NMSE over ``users`` as a ratio of sums; None for an empty set."""
    users = np.asarray(sorted(int(k) for k in users), dtype=int)
    if users.size == 0:
        return None
    err = np.sum(np.abs(H_true[users] - H_est[users]) ** 2, axis=1)
    ref = np.sum(np.abs(H_true[users]) ** 2, axis=1)
    if per_user:
        return float(np.mean(err / ref))
    return float(err.sum() / ref.sum())


def trial_seeds(seed: int):
    """Independent streams for codebook, scene and noise derived from one trial seed."""
    return np.random.SeedSequence(seed).spawn(3)


def mean_lsfc(scene, config: SceneConfig) -> float:
    if config.snr_reference == "expected" or scene.activity.size == 0:
        return config.expected_lsfc()
    return float(np.mean(scene.lsfc[scene.activity]))


def amp_config_for(algorithm: str, base: AmpConfig, scene: SceneConfig) -> AmpConfig:
    variant = "geographical" if algorithm == "em_amp_geo" else "conventional"
    return replace(base, variant=variant, phi_min=scene.phi_min, phi_max=scene.phi_max)


def run_cell(
    scene_cfg: SceneConfig,
    snr_db: float,
    algorithms,
    amp_cfg: AmpConfig = AmpConfig(),
    seed: int = 0,
    N_s: int = 121,
    aoa_sparsity: int | None = None,
    grid_value=None,
    trace_to_tmax: bool = False,
) -> list[MetricRecord]:
    """Run several algorithms on the same seeded frame.

    Both SOMP baselines share one SOMP detection; its cost and time are
    charged to each of them.
    """
    cb_ss, scene_ss, noise_ss = trial_seeds(seed)
    codebook = build_codebook(scene_cfg.G, scene_cfg.K, cb_ss)
    scene = assemble_scene(scene_cfg, scene_ss)
    psi = noise_variance_for_snr(10 ** (snr_db / 10), mean_lsfc(scene, scene_cfg), scene_cfg.G)
    Y = synthesize_rx(codebook, scene, psi, noise_ss)
    k_a = scene_cfg.K_a
    truth = scene.activity

    def record(alg, detected, x_hat, macs, wall, **kw):
        hits = np.intersect1d(detected, truth)
        return MetricRecord(
            algorithm=alg,
            seed=seed,
            ade=ade(truth, detected, k_a) if k_a > 0 else 0.0,
            nmse=nmse(scene.H, x_hat, hits),
            detected_count=len(detected),
            mac_count=int(macs),
            wall_time=wall,
            grid_value=grid_value,
            **kw,
        )

    out = []
    somp_res = None
    somp_time = 0.0
    for alg in algorithms:
        if alg in AMP_ALGORITHMS:
            cfg = amp_config_for(alg, amp_cfg, scene_cfg)

            def detected_nmse(state, cfg=cfg):
                found = np.intersect1d(amp.detect_activity(state.lam, cfg.activity_rule, k_a, cfg.threshold), truth)
                value = nmse(scene.H, state.x_mean, found)
                return math.nan if value is None else value

            t0 = time.perf_counter()
            try:
                res = amp.run(Y, codebook, psi, cfg, k_a=k_a, trace_fn=detected_nmse)
            except AmpDivergenceError as exc:
                wall = time.perf_counter() - t0
                out.append(
                    MetricRecord(alg, seed, math.nan, None, 0, 0, wall, grid_value=grid_value, flags=f"aborted:{exc.line}")
                )
                continue
            wall = time.perf_counter() - t0
            trace = list(res.nmse_trace)
            if trace_to_tmax and len(trace) < cfg.t_max:
                # the estimate is frozen once converged
                trace += [trace[-1]] * (cfg.t_max - len(trace))
            out.append(
                record(alg, res.detected, res.x_hat, res.mac_count, wall, iterations=res.iterations_used, nmse_trace=trace)
            )
        elif alg in ("somp_ls", "somp_aoa"):
            if somp_res is None:
                t0 = time.perf_counter()
                somp_res = somp(Y, codebook, k_a=k_a)
                somp_time = time.perf_counter() - t0
            t0 = time.perf_counter()
            if alg == "somp_ls":
                est = ls_estimate(Y, codebook, somp_res.support)
            else:
                dictionary = build_aoa_dictionary(N_s, scene_cfg.N_o, scene_cfg.M, scene_cfg.theta_min, scene_cfg.theta_max)
                est = aoa_codebook_estimate(Y, codebook, somp_res.support, dictionary, aoa_sparsity or scene_cfg.L_s)
            wall = somp_time + time.perf_counter() - t0
            flags = "rank_deficient" if (est.rank_deficient or somp_res.rank_deficient) else ""
            out.append(
                record(
                    alg,
                    np.asarray(somp_res.support, dtype=int),
                    est.x_hat,
                    somp_res.mac_count + est.mac_count,
                    wall,
                    iterations=len(somp_res.support),
                    flags=flags,
                )
            )
        else:
            raise ValueError(f"unknown algorithm {alg!r}")
    return out


def run_trial(spec: TrialSpec) -> MetricRecord:
    """Scene, SNR calibration, synthesis, one estimator, metrics."""
    return run_cell(spec.scene, spec.snr_db, [spec.algorithm], spec.amp, spec.seed, spec.N_s, spec.aoa_sparsity)[0]


@dataclass
class ExperimentResult:
    name: str
    grid_key: str
    grid: list
    algorithms: list[str]
    records: list[MetricRecord]

    def cell(self, algorithm: str, grid_value) -> list[MetricRecord]:
        return [r for r in self.records if r.algorithm == algorithm and r.grid_value == grid_value]

    def aggregate(self) -> list[dict]:
        return [aggregate_cell(self.cell(a, g), a, g) for g in self.grid for a in self.algorithms]


def aggregate_cell(records: list[MetricRecord], algorithm: str = "", grid_value=None) -> dict:
    """Seed-order-invariant means of one (algorithm, grid value) cell.

    Flagged-as-aborted trials are excluded and counted; NMSE is averaged in
    linear scale over the trials where it is defined and reported missing
    (None) when it never is.
    """
    ok = sorted((r for r in records if not r.flags.startswith("aborted")), key=lambda r: r.seed)
    defined = [r.nmse for r in ok if r.nmse is not None]
    mean_nmse = math.fsum(defined) / len(defined) if defined else None
    n = len(ok)
    return {
        "algorithm": algorithm,
        "grid_value": grid_value,
        "trials": n,
        "aborted": len(records) - n,
        "ade": math.fsum(r.ade for r in ok) / n if n else None,
        "nmse": mean_nmse,
        "nmse_db": 10 * math.log10(mean_nmse) if mean_nmse else None,
        "mac_count": math.fsum(r.mac_count for r in ok) / n if n else None,
        "wall_time": math.fsum(r.wall_time for r in ok) / n if n else None,
    }


def median_trace(records: list[MetricRecord]) -> np.ndarray:
    traces = [r.nmse_trace for r in records if r.nmse_trace]
    T = min(len(t) for t in traces)
    return np.median(np.array([t[:T] for t in traces]), axis=0)


def _experiment_cells(name: str, overrides: dict | None):
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    base = EXPERIMENTS[name]
    overrides = dict(overrides or {})
    scene_kw = {**base["scene"], **overrides.pop("scene", {})}
    amp_kw = overrides.pop("amp", {})
    grid = list(overrides.pop("grid", base["grid"]))
    algorithms = list(overrides.pop("algorithms", base["algorithms"]))
    snr_db = float(overrides.pop("snr_db", base.get("snr_db", 0.0)))
    N_s = int(overrides.pop("N_s", 121))
    aoa_sparsity = overrides.pop("aoa_sparsity", None)
    if overrides:
        raise ValueError(f"unknown experiment overrides: {sorted(overrides)}")
    grid_key = base["grid_key"]
    amp_cfg = AmpConfig(**amp_kw)
    cells = []
    for g in grid:
        skw = dict(scene_kw)
        snr = snr_db
        if grid_key == "snr_db":
            snr = float(g)
        else:
            skw[grid_key] = g
        cells.append((g, SceneConfig(**skw), snr))
    return grid_key, grid, algorithms, amp_cfg, N_s, aoa_sparsity, cells


def _cell_job(args):
    scene_cfg, snr, algorithms, amp_cfg, seed, N_s, aoa_sparsity, g, trace = args
    return run_cell(scene_cfg, snr, algorithms, amp_cfg, seed, N_s, aoa_sparsity, grid_value=g, trace_to_tmax=trace)


def run_experiment(
    name: str,
    overrides: dict | None = None,
    seeds=range(10),
    workers: int = 1,
) -> ExperimentResult:
    """Cross product of algorithms x grid x seeds for one named experiment.

    ``overrides`` may hold ``scene`` and ``amp`` dicts of config fields plus
    ``grid``, ``algorithms``, ``snr_db``, ``N_s`` and ``aoa_sparsity``.
    """
    grid_key, grid, algorithms, amp_cfg, N_s, aoa_sparsity, cells = _experiment_cells(name, overrides)
    trace = name == "convergence"
    jobs = [
        (scene_cfg, snr, algorithms, amp_cfg, int(seed), N_s, aoa_sparsity, g, trace)
        for g, scene_cfg, snr in cells
        for seed in seeds
    ]
    records: list[MetricRecord] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for recs in pool.map(_cell_job, jobs, chunksize=4):
                records.extend(recs)
    else:
        for i, job in enumerate(jobs):
            records.extend(_cell_job(job))
            if (i + 1) % 50 == 0:
                logger.info("%s: %d/%d cells", name, i + 1, len(jobs))
    order = {a: i for i, a in enumerate(algorithms)}
    gindex = {g: i for i, g in enumerate(grid)}
    records.sort(key=lambda r: (gindex[r.grid_value], order[r.algorithm], r.seed))
    return ExperimentResult(name, grid_key, grid, algorithms, records)


def mac_audit(result: amp.EstimateResult, K: int, G: int, N_o: int) -> dict:
    """Measured multiplies per iteration against 4KGN_o + 3KN_o + 2K."""
    per_iter = result.mac_count / max(result.iterations_used, 1)
    formula = amp.complexity_formula(K, G, N_o)
    return {
        "measured_per_iteration": per_iter,
        "formula": formula,
        "ratio": per_iter / formula,
        "dominant_term": 4 * K * G * N_o,
    }


def mac_audit_ka(K: int = 1000, G: int = 400, N_o: int = 8, k_as=(10, 150), snr_db: float = 0.0, seed: int = 0) -> dict:
    """Instrumented runs at several K_a with (K, G, N_o) fixed."""
    counts = {}
    reports = {}
    for k_a in k_as:
        cfg = SceneConfig(K=K, G=G, N_o=N_o, K_a=k_a)
        cb_ss, scene_ss, noise_ss = trial_seeds(seed)
        codebook = build_codebook(G, K, cb_ss)
        scene = assemble_scene(cfg, scene_ss)
        psi = noise_variance_for_snr(10 ** (snr_db / 10), mean_lsfc(scene, cfg), G)
        Y = synthesize_rx(codebook, scene, psi, noise_ss)
        res = amp.run(Y, codebook, psi, AmpConfig(conv_tol=0.0), k_a=k_a)
        reports[k_a] = mac_audit(res, K, G, N_o)
        counts[k_a] = reports[k_a]["measured_per_iteration"]
    return {"per_k_a": reports, "independent_of_k_a": len(set(counts.values())) == 1}
