"""Operator entry point: node simulation, training, benchmarks, dataset tools.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.  Every
randomized command accepts --seed and is bit-reproducible under it.
"""

from __future__ import annotations

import argparse
import itertools
import json
import socket
import sys
import time
from pathlib import Path

from . import bench as bench_mod
from . import dataset as ds
from . import mlp
from .adc import AdcEmulator, SensorModel
from .firmware import NodeFirmware
from .protocol import encode, send_message

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

FIXTURE_RESISTANCES = bench_mod.FIXTURE_RESISTANCES


class UsageError(Exception):
    pass


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ds.DatasetError, mlp.MlError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shmlink",
        description="Structural-health-monitoring stack: emulated nodes, "
                    "training, synchronization, and latency benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    node = sub.add_parser("simulate-node", help="run an emulated sensor node streaming frames")
    node.add_argument("--channels", type=int, choices=(2, 8), default=8)
    node.add_argument("--tick", type=float, default=10.0, help="tick period, seconds")
    node.add_argument("--profile", default="fixture",
                      help="fixture | replay:FILE | ramp")
    node.add_argument("--connect", required=True, metavar="HOST:PORT")
    node.add_argument("--seed", type=int, default=0)
    node.add_argument("--noise", type=float, default=0.0, help="resistance noise std, ohm")
    node.add_argument("--frames", type=int, default=0,
                      help="stop after N frames (0 = until interrupted)")
    node.add_argument("--node-id", type=int, default=0)
    node.set_defaults(func=cmd_simulate_node)

    train = sub.add_parser("train", help="grid-search the strain regressor on a dataset")
    train.add_argument("--data", required=True, metavar="FILE")
    train.add_argument("--channels", type=int, choices=(2, 8), default=2)
    train.add_argument("--grid", metavar="FILE", help="JSON hyperparameter grid")
    train.add_argument("--out", required=True, metavar="MODEL")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--train-fraction", type=float, default=0.8)
    train.set_defaults(func=cmd_train)

    lat = sub.add_parser("bench-latency", help="push-vs-poll trigger-to-response benchmark")
    lat.add_argument("--mode", choices=("push", "poll"), required=True)
    lat.add_argument("--poll-interval", type=float, default=5.0)
    lat.add_argument("--frames", type=int, default=200)
    lat.add_argument("--tick", type=float, default=None,
                     help="node tick period (default 0.02 push / 0.2 poll)")
    lat.add_argument("--channels", type=int, choices=(2, 8), default=2)
    lat.add_argument("--seed", type=int, default=0)
    lat.add_argument("--out", required=True, metavar="REPORT")
    lat.set_defaults(func=cmd_bench_latency)

    sync = sub.add_parser("sync", help="synchronize mechanical-test and resistance logs")
    sync.add_argument("--mech", required=True, metavar="FILE")
    sync.add_argument("--res", required=True, metavar="FILE")
    sync.add_argument("--offset", type=float, default=None,
                      help="clock offset, seconds (estimated when omitted)")
    sync.add_argument("--out", required=True, metavar="FILE")
    sync.set_defaults(func=cmd_sync)
    return parser


# -- simulate-node ------------------------------------------------------------------


def _ramp(channels: int):
    base = FIXTURE_RESISTANCES[:channels]
    tick = 0
    while True:
        yield tuple(r + 0.5 * tick for r in base)
        tick += 1


def _profile_resistances(profile: str, channels: int):
    """Per-tick resistance vectors for the requested profile (validated eagerly)."""
    if profile == "fixture":
        return itertools.repeat(FIXTURE_RESISTANCES[:channels])
    if profile == "ramp":
        return _ramp(channels)
    if profile.startswith("replay:"):
        path = Path(profile.split(":", 1)[1])
        try:
            records = ds.read_table_csv(path.read_text(encoding="utf-8"))
        except (OSError, ds.DatasetError) as exc:
            raise UsageError(f"replay file {path}: {exc}") from exc
        if not records:
            raise UsageError(f"replay file {path} has no rows")
        if len(records[0].resistances) < channels:
            raise UsageError(f"replay file has {len(records[0].resistances)} channels, "
                             f"need {channels}")
        return iter([rec.resistances[:channels] for rec in records])
    raise UsageError(f"unknown profile {profile!r}")


def cmd_simulate_node(args) -> int:
    profile = _profile_resistances(args.profile, args.channels)
    sensors = SensorModel.from_resistances(FIXTURE_RESISTANCES[:args.channels],
                                           noise_std=args.noise)
    emulator = AdcEmulator(sensors, seed=args.seed)
    firmware = NodeFirmware(emulator, node_id=args.node_id, channel_count=args.channels,
                            tick_period=args.tick, trace=False)
    firmware.init()

    host, _, port = args.connect.rpartition(":")
    try:
        sock = socket.create_connection((host, int(port)), timeout=10.0)
    except (OSError, ValueError) as exc:
        print(f"error: cannot connect to {args.connect}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    sent = 0
    try:
        with sock:
            for resistances in profile:
                for ch, r in enumerate(resistances):
                    sensors.set_resistance(ch, r)
                frame = firmware.run_tick(now=firmware.counter * args.tick)
                send_message(sock, encode(frame))
                sent += 1
                if args.frames and sent >= args.frames:
                    break
                time.sleep(args.tick)
    except (OSError, BrokenPipeError) as exc:
        print(f"error: link lost after {sent} frames: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"streamed {sent} frames", file=sys.stderr)
    return EXIT_OK


# -- train --------------------------------------------------------------------------


def _load_grid(path: str | None) -> mlp.HyperGrid:
    if path is None:
        return mlp.HyperGrid()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return mlp.HyperGrid(
            hidden_widths=tuple(doc.get("hidden_widths", (8, 16, 32))),
            learning_rates=tuple(doc.get("learning_rates", (1e-2, 1e-3, 1e-4))),
            batch_sizes=tuple(doc.get("batch_sizes", (32, None))),
            max_epochs=int(doc.get("max_epochs", 500)),
            plateau_patience=int(doc.get("plateau_patience", 50)),
            plateau_tolerance=doc.get("plateau_tolerance", 1e-4))
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"grid file {path}: {exc}") from exc


def cmd_train(args) -> int:
    try:
        records = ds.read_table_csv(Path(args.data).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"data file: {exc}") from exc
    if records and len(records[0].resistances) != args.channels:
        raise UsageError(f"data has {len(records[0].resistances)} channels, "
                         f"--channels says {args.channels}")
    data = mlp.TrainData.from_records(records, train_fraction=args.train_fraction)
    grid = _load_grid(args.grid)

    config, model, report = mlp.grid_search(data, grid, seed=args.seed)
    mlp.save_model(model, args.out)
    report_path = Path(args.out).with_suffix(".report.json")
    report_path.write_text(json.dumps(report.to_dict(), indent=1) + "\n", encoding="utf-8")
    print(f"selected width={config.hidden_width} rate={config.learning_rate} "
          f"batch={config.batch_size}")
    print(f"test MSE {report.test_mse:.6g}  test MAE {report.test_mae:.6g}")
    print(f"model -> {args.out}\nreport -> {report_path}")
    return EXIT_OK


# -- bench-latency -------------------------------------------------------------------


def cmd_bench_latency(args) -> int:
    report = bench_mod.run_bench(mode=args.mode, frames=args.frames, tick=args.tick,
                                 poll_interval=args.poll_interval,
                                 channels=args.channels, seed=args.seed)
    bench_mod.write_report(report, args.out)
    print(f"{args.mode}: mean {report['mean']:.4f}s  p50 {report['p50']:.4f}s  "
          f"p95 {report['p95']:.4f}s  max {report['max']:.4f}s over {args.frames} triggers")
    print(f"report -> {args.out}")
    return EXIT_OK


# -- sync ----------------------------------------------------------------------------


def cmd_sync(args) -> int:
    try:
        mech = ds.parse_mechanical_csv(Path(args.mech).read_text(encoding="utf-8"))
        res = ds.parse_resistance_csv(Path(args.res).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    offset = args.offset
    if offset is None:
        offset = ds.estimate_offset(mech, res)
        print(f"estimated offset: {offset:.3f} s")
    records = ds.synchronize(mech, res, offset)
    Path(args.out).write_text(ds.write_table_csv(records), encoding="utf-8")
    print(f"{len(records)} aligned records -> {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
