"""Command-line entry point: ``run``, ``selftest`` and ``dump-scene``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure, 3 self-test failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from . import amp, harness, oracles, output
from .channel import assemble_scene, build_codebook, noise_variance_for_snr, synthesize_rx
from .config import ConfigError, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_SELFTEST = 0, 1, 2, 3

logger = logging.getLogger("fascsi")


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


# ------------------------------------------------------------------------ run


def cmd_run(config_path, experiment: str, seeds: int, out_dir, plots: bool = False, wall_time: bool = False) -> int:
    try:
        cfg = load_config(config_path)
        if seeds < 1:
            raise ConfigError("--seeds must be at least 1")
        overrides = cfg.harness_overrides()
        harness._experiment_cells(experiment, dict(overrides))  # validates the plan before any work
    except (ConfigError, ValueError, TypeError) as exc:
        return _fail(EXIT_CONFIG, str(exc))

    seed_list = range(cfg.seed_base, cfg.seed_base + seeds)
    try:
        result = harness.run_experiment(experiment, overrides, seeds=seed_list, workers=cfg.workers)
    except Exception as exc:  # noqa: BLE001 - any estimator failure is a runtime failure
        return _fail(EXIT_RUNTIME, f"experiment failed: {exc}")

    out = Path(out_dir)
    csv_path = out / f"{experiment}.csv"
    svg_path = out / f"{experiment}.svg"
    manifest_path = out / f"{experiment}.manifest.json"
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        output.write_results_csv(csv_path, experiment, result.records, wall_time=wall_time)
        written.append(csv_path)
        manifest = {
            "experiment": experiment,
            "config_digest": cfg.digest(),
            "seed_base": cfg.seed_base,
            "seeds": seeds,
            "overrides": overrides,
        }
        with output.atomic_write(manifest_path) as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(manifest_path)
        if plots:
            output.plot_results(csv_path, svg_path)
            written.append(svg_path)
    except OSError as exc:
        for p in written:
            with contextlib.suppress(OSError):
                os.unlink(p)
        return _fail(EXIT_RUNTIME, f"cannot write outputs to {out}: {exc}")

    for row in result.aggregate():
        print(
            f"{experiment} {row['algorithm']:>20} grid={row['grid_value']!s:>6} "
            f"ADE={output.fmt(row['ade'])} NMSE_dB={output.fmt(row['nmse_db'])} "
            f"MACs={output.fmt(row['mac_count'])} aborted={row['aborted']}"
        )
    print(f"wrote {', '.join(str(p) for p in written)}")
    return EXIT_OK


# ------------------------------------------------------------------- selftest

QUAD_TOL = 1e-4
TRANSCRIPTION_TOL = 1e-10


def _corrupted(suite: str):
    """Deliberately wrong implementations used to prove each suite can fail."""
    if suite == "quadrature":
        from . import bg

        def out_post(*a):
            p = bg.output_posterior(*a)
            return bg.OutputPosterior(p.mean, p.var * (1 + 1e-3))

        return {"impl": {"output": out_post, "input": bg.input_posterior}}
    if suite == "em_grid":

        def em(state, config):
            new = amp.em_update(state, config)
            return replace(new, phi=new.phi * 1.01)

        return {"em": em}
    if suite == "transcription":

        def sweep(state, Y, codebook, psi, config, record=False):
            new, lines = amp.amp_iteration(state, Y, codebook, psi, config, record=True)
            lines["A5"] = lines["A5"] * (1 + 1e-6)
            return (new, lines) if record else new

        return {"sweep": sweep}
    if suite == "somp":
        return {"drop_last": True}
    raise ValueError(f"unknown suite {suite!r}")


def run_selftest(corrupt: str | None = None, stream=None) -> bool:
    """Run the four oracle suites, print one line each, return overall success."""
    stream = stream or sys.stdout
    hooks = _corrupted(corrupt) if corrupt else {}
    ok_all = True

    def report(name, ok, detail, t0):
        nonlocal ok_all
        ok_all &= ok
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({time.perf_counter() - t0:.1f} s)", file=stream)

    t0 = time.perf_counter()
    worst = oracles.posterior_quadrature_suite(impl=hooks.get("impl") if corrupt == "quadrature" else None)
    report("posterior quadrature", max(worst.values()) <= QUAD_TOL, f"max rel err {max(worst.values()):.2e}", t0)

    t0 = time.perf_counter()
    misses = oracles.em_grid_suite(em=hooks.get("em") if corrupt == "em_grid" else None)
    bad = misses["conventional"] + misses["geographical"] + misses["ascent"]
    report("EM grid argmin", bad == 0, f"{bad} misses over {misses['cases']} states", t0)

    t0 = time.perf_counter()
    worst = oracles.transcription_suite(sweep=hooks.get("sweep") if corrupt == "transcription" else None)
    line, err = max(worst.items(), key=lambda kv: kv[1])
    report("sweep transcription", err <= TRANSCRIPTION_TOL, f"worst line {line} rel err {err:.2e}", t0)

    t0 = time.perf_counter()
    rec = oracles.somp_recovery_suite(drop_last=bool(hooks.get("drop_last")) if corrupt == "somp" else False)
    report("SOMP noiseless recovery", rec["rate"] == 1.0, f"exact support in {rec['rate']:.0%} of {rec['trials']}", t0)
    return ok_all


def cmd_selftest(corrupt: str | None = None) -> int:
    try:
        ok = run_selftest(corrupt)
    except Exception as exc:  # noqa: BLE001
        return _fail(EXIT_SELFTEST, f"self-test crashed: {exc}")
    return EXIT_OK if ok else EXIT_SELFTEST


# ----------------------------------------------------------------- dump-scene


def cmd_dump_scene(config_path, seed: int, out_dir) -> int:
    """Write codebook, channels, sparse X and received Y of one seeded trial as text."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    scene_cfg = cfg.scene
    snr_db = float(cfg.experiment.get("snr_db", 0.0))
    try:
        cb_ss, scene_ss, noise_ss = harness.trial_seeds(seed)
        codebook = build_codebook(scene_cfg.G, scene_cfg.K, cb_ss)
        scene = assemble_scene(scene_cfg, scene_ss)
        psi = noise_variance_for_snr(10 ** (snr_db / 10), harness.mean_lsfc(scene, scene_cfg), scene_cfg.G)
        Y = synthesize_rx(codebook, scene, psi, noise_ss)
    except Exception as exc:  # noqa: BLE001
        return _fail(EXIT_RUNTIME, f"scene generation failed: {exc}")

    out = Path(out_dir)
    files = {"codebook.csv": codebook.A, "H.csv": scene.H, "X.csv": scene.X, "Y.csv": Y}
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, M in files.items():
            output.write_complex_matrix(out / name, M)
            written.append(out / name)
        meta = {
            "seed": seed,
            "snr_db": snr_db,
            "psi": psi,
            "activity": [int(k) for k in scene.activity],
            "distance": [float(d) for d in scene.geometry.distance],
            "scene": asdict(scene_cfg),
        }
        with output.atomic_write(out / "scene.json") as fh:
            json.dump(meta, fh, indent=1)
            fh.write("\n")
        written.append(out / "scene.json")
    except OSError as exc:
        for p in written:
            with contextlib.suppress(OSError):
                os.unlink(p)
        return _fail(EXIT_RUNTIME, f"cannot write scene to {out}: {exc}")
    print(f"wrote {len(written)} files to {out}")
    return EXIT_OK


# ----------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fascsi", description="EM-AMP channel acquisition experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a named experiment and write its CSV")
    r.add_argument("--config", required=True, help="INI file with [scene], [amp], [experiment]")
    r.add_argument("--experiment", required=True, choices=sorted(harness.EXPERIMENTS))
    r.add_argument("--seeds", type=int, required=True, help="number of seeds per cell")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--plots", action="store_true", help="also render an SVG figure")
    r.add_argument("--wall-time", action="store_true", help="fill wall_time_s (makes the CSV machine dependent)")

    s = sub.add_parser("selftest", help="run the oracle suites")
    s.add_argument("--corrupt", choices=("quadrature", "em_grid", "transcription", "somp"), help=argparse.SUPPRESS)

    d = sub.add_parser("dump-scene", help="dump one seeded scene as text matrices")
    d.add_argument("--config", required=True)
    d.add_argument("--seed", type=int, required=True)
    d.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; bad arguments are configuration errors here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.experiment, args.seeds, args.out, args.plots, args.wall_time)
    if args.command == "selftest":
        return cmd_selftest(args.corrupt)
    return cmd_dump_scene(args.config, args.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())
