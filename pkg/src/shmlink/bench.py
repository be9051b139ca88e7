"""Push-vs-poll latency benchmark over a real in-process loopback stack.

Spins up the full chain — emulated node firmware streaming framed telemetry
over TCP, gateway ingesting and triggering, inference server answering — and
measures trigger-to-response time per frame on the monotonic clock.

Push mode: every frame triggers an immediate TCP predict round trip.
Poll mode: triggers become upload files; the server's periodic scan answers
them, so each trigger waits for the next scan.  Frames arrive on the node
tick schedule, spreading arrivals across poll cycles; with the default 0.2 s
tick, 200 triggers span several 5 s cycles and the measured mean approaches
interval/2 plus the processing base, without serializing the waits.
"""

from __future__ import annotations

import json
import socket
import tempfile
import threading
import time
from pathlib import Path

import numpy as np

from . import mlp
from .adc import AdcEmulator, SensorModel
from .firmware import NodeFirmware
from .gateway import Gateway, GatewayConfig, TriggerRule, latency_summary, node_listener, read_node_stream
from .protocol import encode, send_message
from .server import InferenceServer, ServerConfig

FIXTURE_RESISTANCES = (47.0, 47.0, 100.0, 100.0, 120.0, 120.0, 120.0, 120.0)

DEFAULT_PUSH_TICK = 0.02
DEFAULT_POLL_TICK = 0.2


def make_bench_model(channels: int, path, seed: int = 0) -> None:
    """Write a small random regressor for the bench to serve."""
    rng = np.random.default_rng(seed)
    base = np.array(FIXTURE_RESISTANCES[:channels])
    model = mlp.init_model(channels, 8, mu=base, sigma=np.ones(channels), rng=rng)
    mlp.save_model(model, path)


def _node_stream(endpoint: tuple[str, int], frames: int, tick: float,
                 channels: int, seed: int, failures: list) -> None:
    """Run the firmware loop and stream encoded frames to the gateway."""
    try:
        sensors = SensorModel.from_resistances(FIXTURE_RESISTANCES[:channels])
        emulator = AdcEmulator(sensors, seed=seed)
        firmware = NodeFirmware(emulator, channel_count=channels, tick_period=tick,
                                trace=False)
        firmware.init()
        with socket.create_connection(endpoint, timeout=5.0) as sock:
            for i in range(frames):
                frame = firmware.run_tick(now=i * tick)
                send_message(sock, encode(frame))
                time.sleep(tick)
    except Exception as exc:
        failures.append(exc)


def run_bench(mode: str, frames: int = 200, tick: float | None = None,
              poll_interval: float = 5.0, channels: int = 2, seed: int = 0,
              workdir: str | None = None) -> dict:
    """Run one benchmark; returns the latency report document.

    ``mode`` is "push" or "poll".  All components run in-process over
    loopback TCP; temporary state lives under ``workdir`` (a fresh temp
    directory by default).
    """
    if mode not in ("push", "poll"):
        raise ValueError(f"unknown mode {mode!r}")
    if tick is None:
        tick = DEFAULT_PUSH_TICK if mode == "push" else DEFAULT_POLL_TICK
    cleanup = None
    if workdir is None:
        tmp = tempfile.TemporaryDirectory(prefix="shmlink-bench-")
        workdir, cleanup = tmp.name, tmp
    work = Path(workdir)
    try:
        return _run_bench(mode, frames, tick, poll_interval, channels, seed, work)
    finally:
        if cleanup is not None:
            cleanup.cleanup()


def _run_bench(mode: str, frames: int, tick: float, poll_interval: float,
               channels: int, seed: int, work: Path) -> dict:
    model_path = work / "bench_model.json"
    make_bench_model(channels, model_path, seed=seed)
    upload_dir = work / "uploads"
    upload_dir.mkdir(exist_ok=True)

    server = InferenceServer(ServerConfig(host="127.0.0.1", port=0,
                                          model_files={"default": str(model_path)},
                                          upload_dir=str(upload_dir)))
    server.start()
    host, port = server.address
    if mode == "poll":
        server.start_poll_mode(upload_dir, poll_interval)

    listener = node_listener("127.0.0.1", 0)
    node_endpoint = listener.getsockname()

    gateway = Gateway(GatewayConfig(
        node_endpoints=[f"{node_endpoint[0]}:{node_endpoint[1]}"],
        server_endpoint=f"{host}:{port}",
        mode="push" if mode == "push" else "poll-compat",
        persistence_path=str(work / "telemetry.csv"),
        trigger=TriggerRule(every_frame=True),
        latency_log_path=str(work / "latency.csv"),
        upload_dir=str(upload_dir)))

    failures: list = []
    node = threading.Thread(target=_node_stream,
                            args=(node_endpoint, frames, tick, channels, seed, failures),
                            daemon=True, name="bench-node")

    # poll-compat results must be noticed as they appear, not after the run
    watcher_stop = threading.Event()

    def watch_results() -> None:
        while not watcher_stop.is_set():
            gateway.poll_results_once()
            time.sleep(0.002)

    watcher = threading.Thread(target=watch_results, daemon=True, name="bench-watch")

    started = time.perf_counter()
    node.start()
    if mode == "poll":
        watcher.start()
    listener.settimeout(30.0)
    try:
        conn, _ = listener.accept()
    except socket.timeout:
        raise (failures[0] if failures
               else RuntimeError("node never connected")) from None
    with conn:
        ingested = read_node_stream(conn, gateway, max_frames=frames)
    node.join(timeout=frames * tick + 30)

    if mode == "poll":
        # wait for the scan following the last trigger
        deadline = time.perf_counter() + poll_interval * 2 + 10
        while gateway.pending_poll_count and time.perf_counter() < deadline:
            time.sleep(0.01)
        watcher_stop.set()
        watcher.join(timeout=5)

    listener.close()
    gateway.close()
    server.stop()
    if failures:
        raise failures[0]
    if ingested != frames or len(gateway.latency_records) != frames:
        raise RuntimeError(f"expected {frames} triggers, measured {len(gateway.latency_records)} "
                           f"({ingested} frames ingested)")

    summary = latency_summary(gateway.latency_records)
    return {"mode": mode, "frames": frames, "tick": tick, "channels": channels,
            "poll_interval": poll_interval if mode == "poll" else None,
            "wall_time": time.perf_counter() - started, **summary}


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
