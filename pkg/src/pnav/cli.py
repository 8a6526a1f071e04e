"""Command-line interface: ``pnav <command> [options]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 I/O failure
(unreadable, unwritable or corrupt file) or command-line usage error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as pio
from . import stream as pstream
from .errors import PnavError
from .geom import compose, invert
from .guidance import simulate_insertion
from .handeye import make_motion_pairs, rmse_e2h, solve_axxb
from .metrics import MODALITY_ORDER, aggregate, aggregate_scores, significance_stars, wilcoxon_ranksum
from .register import average_blocks, rmse_fiducials, svd_rigid_fit
from .scenario import (
    PairwiseTest,
    ScenarioConfig,
    gen_world,
    pairwise_tests,
    probe_blocks,
    run_experiment,
    run_pipeline,
    synth_pose_pairs,
    task_from_world,
)

SEED_ENV = "PNAV_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}\n")


def _seed(args, fallback: int = 0) -> int:
    """``--seed``, else ``$PNAV_SEED``, else ``fallback``."""
    if getattr(args, "seed", None) is not None:
        return args.seed
    raw = os.environ.get(SEED_ENV, "").strip()
    if not raw:
        return fallback
    try:
        return int(raw)
    except ValueError as exc:
        raise PnavError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def _load_config(args) -> ScenarioConfig:
    kv = pio.read_config(args.config) if getattr(args, "config", None) else {}
    cfg = ScenarioConfig.from_mapping(kv)
    return replace(cfg, noise=replace(cfg.noise, seed=_seed(args, cfg.noise.seed)))


def _print(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_calibrate_handeye(args) -> int:
    pairs = pio.read_pose_pairs(args.pairs)
    sol = solve_axxb(make_motion_pairs(pairs, all_pairs=args.all_pairs))
    pio.write_transforms(args.out, [("base_from_tracker", sol.x)])
    _print(f"motions used {sol.n_used}, dropped {sol.n_dropped}")
    _print(f"AX=XB residual: rotation {sol.rotation_residual_deg:.6g} deg, translation {sol.translation_residual_mm:.6g} mm")
    if args.markers_tracker or args.markers_robot:
        if not (args.markers_tracker and args.markers_robot):
            raise PnavError("--markers-tracker and --markers-robot must be given together")
        e = rmse_e2h(pio.read_fiducials(args.markers_tracker, "tracker"),
                     pio.read_fiducials(args.markers_robot, "base"), sol.x)
        _print(f"RMSE_E2H = {e:.2f} mm")
    return 0


def cmd_register(args) -> int:
    src = pio.read_fiducials(args.src, "src")
    if args.dst_probe:
        dst = average_blocks(pio.read_probe_samples(args.dst_probe), "dst")
    elif args.dst:
        dst = pio.read_fiducials(args.dst, "dst")
    else:
        raise PnavError("one of --dst or --dst-probe is required")
    if args.map:
        (_, t_map), *_ = pio.read_transforms(args.map)
        dst = dst.transformed(t_map, "dst")
    t = svd_rigid_fit(src, dst)
    pio.write_transforms(args.out, [("dst_from_src", t)])
    if args.rmse:
        _print(f"RMSE = {rmse_fiducials(dst, src, t):.6g} mm")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    world = gen_world(cfg.noise, cfg.plan())
    presets = cfg.presets()
    mod = next(m for m in MODALITY_ORDER if m.value == args.modality)
    out = simulate_insertion(mod, task_from_world(world), presets[mod], cfg.noise.seed, cfg.sim,
                             trial=args.trial, record_every=args.record_every)
    pio.write_trajectory(args.out, out.trajectory)
    r = out.result
    _print(f"{r.modality.value}: E_T = {r.e_t:.4f} mm, E_O = {r.e_o:.4f} deg, time = {r.t_total:.3f} s")
    return 0


def _pretty_table(rows) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def _write_tests(out: Path, tests) -> None:
    pio.write_wilcoxon(out / "wilcoxon.csv", tests)


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    if args.trials is not None:
        cfg = replace(cfg, trials=args.trials)
    if args.modalities:
        cfg = replace(cfg, modalities=tuple(m.strip() for m in args.modalities.split(",")))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = gen_world(cfg.noise, cfg.plan())
    report = run_pipeline(world, cfg.noise, n_configs=cfg.n_configs, probe_samples=cfg.probe_samples,
                          all_pairs=cfg.all_pairs)
    res = run_experiment(world, cfg.modalities, cfg.trials, cfg.noise, cfg.sim, cfg.presets())

    pio.write_trials(out / "trials.csv", res.trials)
    pio.write_stats(out / "stats.csv", res.stats)
    pio.write_table1(out / "table1.csv", res.stats)
    _write_tests(out, res.tests)
    pio.write_calibration(out / "calibration.csv", report)
    pio.write_config(out / "config.used", cfg.to_mapping())
    text = (
        "Calibration and registration (synthetic)\n"
        + report.text()
        + "\nTask completion (median ± SD)\n"
        + _pretty_table(res.table())
        + "\nPairwise Wilcoxon rank-sum tests\n"
        + _pretty_table([["metric", "a", "b", "U", "p", "sig"]]
                        + [[t.metric, t.group_a, t.group_b, f"{t.u:g}", f"{t.p:.3g}", t.stars] for t in res.tests])
        + "\n"
        + res.assumptions()
    )
    (out / "report.txt").write_text(text, encoding="utf-8")
    if args.export_inputs:
        _export_inputs(Path(args.export_inputs), world, cfg)
    sys.stdout.write(text)
    return 0


def _export_inputs(d: Path, world, cfg: ScenarioConfig) -> None:
    """Synthetic measurement files for the calibrate-handeye and register commands."""
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([cfg.noise.seed, 3])
    pio.write_pose_pairs(d / "pairs.csv", synth_pose_pairs(world, cfg.noise, rng, cfg.n_configs))
    pio.write_fiducials(d / "phantom.csv", world.fiducials)
    tracker_from_phantom = compose(invert(world.base_from_tracker), world.base_from_phantom)
    blocks = probe_blocks(rng, world.fiducials, tracker_from_phantom, cfg.noise.probe_sd, cfg.probe_samples)
    pio.write_probe_samples(d / "probe_samples.csv", blocks)
    pio.write_fiducials(d / "probed.csv", average_blocks(blocks, "tracker"))
    e2h = probe_blocks(rng, world.e2h_markers, invert(world.base_from_tracker), cfg.noise.probe_sd, cfg.probe_samples)
    pio.write_fiducials(d / "markers_tracker.csv", average_blocks(e2h, "tracker"))
    pio.write_fiducials(d / "markers_robot.csv", world.e2h_markers)


def cmd_metrics(args) -> int:
    if not (args.trials or args.scores):
        raise PnavError("give --trials and/or --scores")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.trials:
        trials = pio.read_trials(args.trials)
        stats = aggregate(trials)
        mods = list(dict.fromkeys(s.modality for s in stats))
        pio.write_stats(out / "stats.csv", stats)
        pio.write_table1(out / "table1.csv", stats)
        _write_tests(out, pairwise_tests(trials, mods) if len(mods) > 1 else [])
    if args.scores:
        groups = pio.read_scores(args.scores)
        stats = aggregate_scores(groups)
        pio.write_stats(out / "score_stats.csv", stats)
        names = list(groups)
        tests = []
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                r = wilcoxon_ranksum(groups[a], groups[b])
                tests.append(PairwiseTest("score", a, b, r.u, r.p))
        pio.write_wilcoxon(out / "score_wilcoxon.csv", tests)
        for t in tests:
            _print(f"score {t.group_a} vs {t.group_b}: U = {t.u:g}, p = {t.p:.3g} {significance_stars(t.p)}")
    return 0


def cmd_stream(args) -> int:
    if args.action == "record":
        bodies = []
        for i, name in enumerate(args.bodies.split(","), start=1):
            bodies.append((i, name.strip()))
        header, frames = pstream.synthesize_frames(args.frames, bodies, args.rate_hz, _seed(args))
        n = pstream.stream_record(args.out, header, frames)
        _print(f"wrote {len(frames)} frames, {n} bytes")
    elif args.action == "replay":
        if args.input is None:
            raise PnavError("--in is required for replay")
        frames = list(pstream.stream_replay(args.input, args.rate))
        if args.out:
            pio.write_frames(args.out, frames)
        _print(f"replayed {len(frames)} frames")
    else:
        if args.input is None:
            raise PnavError("--in is required for info")
        header, frames = pstream.read_stream(args.input)
        bodies = ", ".join(f"{i}:{n}" for i, n in header.bodies)
        span = (frames[-1].timestamp_us - frames[0].timestamp_us) * 1e-6 if frames else 0.0
        _print(f"version {header.version}; bodies {bodies}; {len(frames)} frames over {span:.3f} s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="pnav",
        description="Calibration, registration, guidance simulation and evaluation for needle navigation.",
        epilog=pio.__doc__ + f"\nThe --seed option falls back to ${SEED_ENV}, then the config file, then 0.\n",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def seed_opt(sp):
        sp.add_argument("--seed", type=int, default=None, help=f"random seed (default ${SEED_ENV} or 0)")

    sp = sub.add_parser("calibrate-handeye", help="solve AX = XB from a pose-pair CSV")
    sp.add_argument("--pairs", required=True, help="pose-pair CSV")
    sp.add_argument("--out", required=True, help="transform CSV to write")
    sp.add_argument("--all-pairs", action="store_true", help="use every pose pair combination")
    sp.add_argument("--markers-tracker", help="fiducial CSV of markers measured by the tracker")
    sp.add_argument("--markers-robot", help="fiducial CSV of the same markers in the robot frame")
    seed_opt(sp)
    sp.set_defaults(func=cmd_calibrate_handeye)

    sp = sub.add_parser("register", help="rigid SVD fit between two fiducial sets")
    sp.add_argument("--src", required=True, help="fiducial CSV in the source frame")
    sp.add_argument("--dst", help="fiducial CSV in the destination frame")
    sp.add_argument("--dst-probe", help="probe-sample CSV, averaged per target")
    sp.add_argument("--map", help="transform CSV applied to the destination points first")
    sp.add_argument("--out", required=True, help="transform CSV to write")
    sp.add_argument("--rmse", action="store_true", help="print the fit RMSE")
    seed_opt(sp)
    sp.set_defaults(func=cmd_register)

    sp = sub.add_parser("simulate", help="simulate one insertion trial and write its trajectory")
    sp.add_argument("--modality", required=True, choices=[m.value for m in MODALITY_ORDER])
    sp.add_argument("--config", help="scenario config file (key = value)")
    sp.add_argument("--trial", type=int, default=0)
    sp.add_argument("--record-every", type=int, default=10, help="integration steps per trajectory row")
    sp.add_argument("--out", required=True, help="trajectory CSV to write")
    seed_opt(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("experiment", help="calibration pipeline plus the four-modality comparison")
    sp.add_argument("--config", help="scenario config file (key = value)")
    sp.add_argument("--trials", type=int, default=None, help="trials per modality")
    sp.add_argument("--modalities", help="comma-separated subset of SM,SG,AM,AG")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--export-inputs", help="also write synthetic measurement CSVs to this directory")
    seed_opt(sp)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("metrics", help="aggregate trial results or ingested scores")
    sp.add_argument("--trials", help="trials CSV")
    sp.add_argument("--scores", help="scores CSV (modality,score), e.g. NASA-TLX")
    sp.add_argument("--out", required=True, help="output directory")
    seed_opt(sp)
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("stream", help="record, replay or inspect a binary pose stream")
    sp.add_argument("action", choices=["record", "replay", "info"])
    sp.add_argument("--in", dest="input", help="stream file to read")
    sp.add_argument("--out", help="stream file (record) or frame CSV (replay)")
    sp.add_argument("--frames", type=int, default=100, help="frames per body to synthesize")
    sp.add_argument("--rate-hz", type=float, default=pstream.DEFAULT_RATE_HZ, help="synthesized frame rate")
    sp.add_argument("--bodies", default="probe,ref", help="comma-separated body names")
    sp.add_argument("--rate", type=float, default=math.inf,
                    help="replay speed factor (1 = real time; default: no pacing)")
    seed_opt(sp)
    sp.set_defaults(func=cmd_stream)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "pnav: error: a command is required\n")
        if args.command == "stream" and args.action == "record" and not args.out:
            raise UsageError(parser.format_usage() + "pnav: error: stream record needs --out\n")
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 2
    except PnavError as exc:
        sys.stderr.write(f"pnav: error: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"pnav: I/O error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
