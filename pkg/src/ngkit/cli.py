"""Command-line entry point: ``ngkit <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
3 internal invariant violation.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .abr import (METRICS, BufferBased, CapacityLink, Mpc, NgMpc, QoeParams, VideoSpec,
                  download_sim, qoe, step_trace)
from .capacity import CapacityEstimator, aggregate_ca, cell_utilization, smooth
from .cell import BANDWIDTH_CCE, SEGMENT, CellConfig
from .config import ConfigError, ExperimentConfig, load_config
from .emulation import (MTU_BITS, CubicSender, LinkTrace, NgCc, drop_messages, emulate,
                        read_trace, trace_from_capacity, write_trace)
from .io import (DataFormatError, LlrWriter, group_by_sfn, parse_range, parse_rnti,
                 read_llr_header, read_llr_stream, read_messages, read_table, write_decoded,
                 write_messages, write_packets, write_table)
from .pipeline import BACKPRESSURE, REJECTED, CellWorker, default_pool_size
from .sim import NetworkSimulator, channel_apply, encode_subframe
from .tracker import TrackerEvent, ca_intersect

log = logging.getLogger("ngkit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# helpers --------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, args: argparse.Namespace, seed: Optional[int],
                   config_digest: str, outputs: Sequence[Path]):
    try:
        import numba
        numba_version = numba.__version__
    except ImportError:  # pragma: no cover
        numba_version = None
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
              if k not in ("func", "out", "verbose")}
    manifest = {
        "command": command,
        "parameters": params,
        "config_sha256": config_digest,
        "seed": seed,
        "versions": {"ngkit": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "numba": numba_version},
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _config(args) -> Optional[ExperimentConfig]:
    if getattr(args, "config", None) is None:
        return None
    return load_config(args.config, seed_override=getattr(args, "seed", None))


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cell_for(cell_id: int, n_cce: Optional[int], cfg: Optional[ExperimentConfig],
              bandwidth: Optional[int]) -> CellConfig:
    if cfg is not None:
        try:
            cell = cfg.cell(cell_id)
        except ConfigError:
            cell = None
        if cell is not None:
            if n_cce is not None and cell.n_cce != n_cce:
                raise DataFormatError(f"cell {cell_id}: stream has {n_cce} CCEs, config implies {cell.n_cce}")
            return cell
    if bandwidth is not None:
        return CellConfig(cell_id=cell_id, bandwidth_mhz=bandwidth)
    if n_cce is not None:
        for bw, usable in BANDWIDTH_CCE.items():
            if -(-usable // SEGMENT) * SEGMENT == n_cce:
                return CellConfig(cell_id=cell_id, bandwidth_mhz=bw)
        raise DataFormatError(f"cell {cell_id}: no bandwidth has {n_cce} CCEs")
    return CellConfig(cell_id=cell_id)


# simulate -------------------------------------------------------------------

def cmd_simulate(args) -> list[Path]:
    cfg = _config(args)
    if cfg is None:
        raise ConfigError("simulate needs --config")
    if args.duration is not None:
        cfg.duration_ms = args.duration
    cfg.require("duration_ms", "cells", "ues")
    out = _outdir(args)
    try:
        sim = NetworkSimulator(cfg.ues, cfg.cells, ber=cfg.ber, seed=cfg.seed,
                               max_messages=cfg.max_messages, record_rntis=cfg.record)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    chans = [np.random.default_rng([cfg.seed, 0x11, c.cell_id]) for c in cfg.cells]
    llr_paths = [out / f"cell{c.cell_id}.llr" for c in cfg.cells]
    writers = [LlrWriter(p, c.cell_id, c.n_cce) for p, c in zip(llr_paths, cfg.cells)]
    truth_rows = []
    sub_rows = []
    try:
        for truths in sim.run(cfg.duration_ms):
            for t, c, w, rng in zip(truths, cfg.cells, writers, chans):
                w.write(channel_apply(encode_subframe(t, c), cfg.snr_db, rng))
                truth_rows.extend(t.messages)
                sub_rows.append((t.sfn, t.cell_id, len(t.messages), t.idle_prb, len(t.retransmissions)))
    finally:
        for w in writers:
            w.close()
    outputs = list(llr_paths)
    truth = out / "truth.csv"
    write_messages(truth, truth_rows)
    subs = out / "subframes.csv"
    write_table(subs, ["sfn", "cell_id", "messages", "idle_prb", "retransmissions"], sub_rows)
    outputs += [truth, subs]
    for rnti in cfg.record:
        p = out / f"packets_{rnti:#06x}.csv"
        write_packets(p, sim.packet_log(rnti))
        outputs.append(p)
    write_manifest(out, "simulate", args, cfg.seed, cfg.digest, outputs)
    print(f"simulated {cfg.duration_ms} ms on {len(cfg.cells)} cell(s): {len(truth_rows)} messages")
    return outputs


# decode ---------------------------------------------------------------------

def decode_files(paths: Sequence[Path], cfg: Optional[ExperimentConfig], bandwidth: Optional[int],
                 pool: Optional[int], max_attempts: Optional[int]):
    """Decode per-cell LLR files in lockstep. Returns (reports per cell, tracker events)."""
    headers = [read_llr_header(p) for p in paths]
    if len({h.cell_id for h in headers}) != len(headers):
        raise DataFormatError("two LLR streams carry the same cell id")
    cells = [_cell_for(h.cell_id, h.n_cce, cfg, bandwidth) for h in headers]
    pool = pool or default_pool_size()
    reports = {c.cell_id: [] for c in cells}
    events: list[TrackerEvent] = []
    ca_known: set = set()
    with ThreadPoolExecutor(pool) as ex:
        workers = [CellWorker(c, pool_size=pool, executor=ex, max_attempts=max_attempts) for c in cells]
        streams = [read_llr_stream(p) for p in paths]
        next_boundary = None

        def ca_step(final: bool = False):
            nonlocal next_boundary
            while next_boundary is not None:
                snaps = [w.snapshots.get(next_boundary) for w in workers]
                if any(sn is None for sn in snaps):
                    if not final:
                        return
                    if next_boundary > max(w.assembled_sfn for w in workers):
                        return
                    next_boundary += 10
                    continue
                if len(workers) > 1:
                    cmap = ca_intersect([s.tracker for s in snaps])
                    for rnti in sorted(set(cmap.cells) - ca_known):
                        ca_known.add(rnti)
                        events.append(TrackerEvent(next_boundary, cmap.primary(rnti), rnti,
                                                   "ca_detected", cmap.primary(rnti)))
                next_boundary += 10

        live = list(zip(workers, streams))
        while live:
            still = []
            for w, s in live:
                sub = next(s, None)
                if sub is None:
                    continue
                still.append((w, s))
                while (status := w.submit(sub)) == BACKPRESSURE:
                    w.wait()
                if status == REJECTED:
                    raise DataFormatError(f"cell {w.cfg.cell_id}: subframe {sub.sfn} out of order")
                if next_boundary is None:
                    next_boundary = w.hint_boundary(sub.sfn)
                reports[w.cfg.cell_id].extend(w.drain_ordered())
            live = still
            ca_step()
        for w in workers:
            reports[w.cfg.cell_id].extend(w.flush())
        ca_step(final=True)
        for w in workers:
            events.extend(w.tracker.events)
    events.sort(key=lambda e: (e.sfn, e.cell_id, e.rnti, e.event))
    return cells, reports, events


def cmd_decode(args) -> list[Path]:
    cfg = _config(args)
    out = _outdir(args)
    paths = [Path(p) for p in args.llr]
    for p in paths:
        if not p.exists():
            raise DataFormatError(f"{p}: no such file")
    cells, reports, events = decode_files(paths, cfg, args.bandwidth, args.pool, args.max_attempts)
    rows, rep_rows = [], []
    for c in cells:
        for r in reports[c.cell_id]:
            rows.extend((d, r.attempts) for d in r.validated)
            rep_rows.append((r.sfn, r.cell_id, r.attempts, r.pruned_cces, len(r.validated)))
    rows.sort(key=lambda x: (x[0].msg.sfn, x[0].msg.cell_id, x[0].msg.cce_start))
    rep_rows.sort()
    decoded, rep_path, ue_path = out / "decoded.csv", out / "reports.csv", out / "detected_ues.csv"
    write_decoded(decoded, rows)
    write_table(rep_path, ["sfn", "cell_id", "attempts", "pruned_cces", "messages"], rep_rows)
    write_table(ue_path, ["sfn", "cell_id", "rnti", "event", "primary_cell"],
                ((e.sfn, e.cell_id, e.rnti, e.event, e.primary_cell) for e in events))
    outputs = [decoded, rep_path, ue_path]
    write_manifest(out, "decode", args, cfg.seed if cfg else None, cfg.digest if cfg else "", outputs)
    print(f"decoded {len(rep_rows)} subframes: {len(rows)} messages")
    return outputs


# capacity -------------------------------------------------------------------

def capacity_tables(msgs, cells: Sequence[CellConfig], target: int, window: int, ca: bool,
                    sfn_range: Optional[tuple] = None):
    """Raw and smoothed capacity per serving cell of the target, plus their aggregate."""
    by_cell: dict = {}
    for m in msgs:
        by_cell.setdefault(m.cell_id, []).append(m)
    first_seen = {c: min((m.sfn for m in ms if m.rnti == target), default=None) for c, ms in by_cell.items()}
    served = sorted((c for c, s in first_seen.items() if s is not None), key=lambda c: (first_seen[c], c))
    if not served:
        raise DataFormatError(f"C-RNTI {target:#06x} never appears in the log")
    use = served if ca else served[:1]
    if sfn_range is None:
        sfns = [m.sfn for m in msgs]
        sfn_range = (min(sfns), max(sfns))
    cell_cfg = {c.cell_id: c for c in cells}
    samples, smoothed = {}, {}
    for cid in use:
        if cid not in cell_cfg:
            cell_cfg[cid] = CellConfig(cell_id=cid)
        est = CapacityEstimator(cell_cfg[cid], target)
        grouped = group_by_sfn(by_cell.get(cid, []))
        samples[cid] = [est.update(s, grouped.get(s, [])) for s in range(sfn_range[0], sfn_range[1] + 1)]
        smoothed[cid] = smooth(samples[cid], window)
    agg = aggregate_ca(smoothed, use)
    raw_total = [sum(samples[c][i].capacity_bits for c in use) for i in range(len(agg))]
    util = {cid: [cell_utilization(group_by_sfn(by_cell.get(cid, [])).get(s.sfn, []), cell_cfg[cid])
                  for s in samples[cid]] for cid in use}
    return use, samples, smoothed, agg, raw_total, util


def cmd_capacity(args) -> list[Path]:
    cfg = _config(args)
    out = _outdir(args)
    target = parse_rnti(args.target) if args.target else (cfg.target if cfg else None)
    if target is None:
        raise ConfigError("capacity needs --target or a [run] target")
    msgs = [m for p in args.decoded for m in read_messages(p)]
    if not msgs:
        raise DataFormatError("decoded log is empty")
    if args.drop:
        msgs = drop_messages(msgs, args.drop, args.seed if args.seed is not None else (cfg.seed if cfg else 0))
    cell_ids = sorted({m.cell_id for m in msgs})
    cells = [_cell_for(c, None, cfg, args.bandwidth) for c in cell_ids]
    sfns = [m.sfn for m in msgs]
    use, samples, smoothed, agg, raw_total, _ = capacity_tables(
        msgs, cells, target, args.window, args.ca, (min(sfns), max(sfns)))
    rows = []
    for i, a in enumerate(agg):
        for cid in use:
            s = samples[cid][i]
            rows.append((s.sfn, cid, s.target_prb, s.idle_prb, s.bits_per_prb, s.capacity_bits,
                         smoothed[cid][i].capacity_bits))
        if args.ca:
            tp = sum(samples[c][i].target_prb for c in use)
            idle = sum(samples[c][i].idle_prb for c in use)
            bpp = raw_total[i] / (tp + idle) if tp + idle else 0.0
            rows.append((a.sfn, "CA", tp, idle, bpp, raw_total[i], a.capacity_bits))
    cap_path, trace_path = out / "capacity.csv", out / "capacity.trace"
    write_table(cap_path, ["sfn", "cell_id", "target_prb", "idle_prb", "bits_per_prb",
                           "capacity_bits", "smoothed_bits"], rows)
    write_trace(trace_from_capacity(raw_total), trace_path)
    outputs = [cap_path, trace_path]
    write_manifest(out, "capacity", args, cfg.seed if cfg else args.seed, cfg.digest if cfg else "", outputs)
    print(f"capacity for {target:#06x} over cells {use}: {len(agg)} ms")
    return outputs


def _telemetry_from_csv(path, duration: int) -> np.ndarray:
    rows = read_table(path, ["sfn", "cell_id", "smoothed_bits"])
    if not rows:
        raise DataFormatError(f"{path}: empty capacity table")
    ca_rows = [r for r in rows if r["cell_id"] == "CA"]
    use = ca_rows or [r for r in rows if r["cell_id"] == rows[0]["cell_id"]]
    try:
        vals = np.array([float(r["smoothed_bits"]) for r in use])
    except ValueError as exc:
        raise DataFormatError(f"{path}: bad smoothed_bits") from exc
    tel = np.full(duration, np.nan)
    n = min(duration, len(vals))
    tel[:n] = vals[:n]
    return tel


# emulate --------------------------------------------------------------------

def _read_trace_arg(path) -> LinkTrace:
    try:
        return read_trace(path)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc


def cmd_emulate(args) -> list[Path]:
    cfg = _config(args)
    out = _outdir(args)
    trace = _read_trace_arg(args.trace)
    duration = args.duration or trace.duration_ms
    prop = args.prop_delay
    algos = ["ngcc", "cubic"] if args.cc == "both" else [args.cc]
    rows = []

    def run_ngcc(telemetry, util, lead, run, drop):
        r = emulate(trace, NgCc(telemetry, lead_ms=lead, utilization=util), duration, prop)
        rows.append(("ngcc", run, drop, r.metrics.throughput_bps, r.metrics.p95_delay_ms, r.metrics.mean_delay_ms))
        return r

    if args.sweep_drop:
        if not args.messages:
            raise ConfigError("--sweep-drop needs --messages (a decoded log) and --target")
        target = parse_rnti(args.target) if args.target else (cfg.target if cfg else None)
        if target is None:
            raise ConfigError("--sweep-drop needs --target")
        msgs = read_messages(args.messages)
        cells = [_cell_for(c, None, cfg, args.bandwidth) for c in sorted({m.cell_id for m in msgs})]
        seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
        sfns = [m.sfn for m in msgs]
        first = min(sfns)
        for p in parse_range(args.sweep_drop):
            kept = drop_messages(msgs, p, seed)
            use, _, _, agg, _, util = capacity_tables(kept, cells, target, args.window, True, (first, max(sfns)))
            tel = np.array([a.capacity_bits for a in agg])
            u = np.mean([util[c] for c in use], axis=0)
            run_ngcc(tel, u, 0, 0, p)
    else:
        for algo in algos:
            if algo == "ngcc":
                if args.telemetry:
                    run_ngcc(_telemetry_from_csv(args.telemetry, duration), None, 0, 0, 0.0)
                else:
                    # perfect telemetry: the bottleneck's own schedule, seen when packets arrive
                    run_ngcc(trace.counts.astype(float) * MTU_BITS, None, prop, 0, 0.0)
            else:
                r = emulate(trace, CubicSender(), duration, prop, args.buffer)
                rows.append(("cubic", 0, 0.0, r.metrics.throughput_bps, r.metrics.p95_delay_ms,
                             r.metrics.mean_delay_ms))
        if args.cc == "both":
            ng, cu = rows[0], rows[1]
            rows.append(("ngcc/cubic", 0, 0.0, ng[3] / cu[3] if cu[3] else math.nan,
                         ng[4] / cu[4] if cu[4] else math.nan, ng[5] / cu[5] if cu[5] else math.nan))
    path = out / "metrics.csv"
    write_table(path, ["algorithm", "run", "drop", "throughput_bps", "p95_delay_ms", "mean_delay_ms"], rows)
    write_manifest(out, "emulate", args, cfg.seed if cfg else args.seed, cfg.digest if cfg else "", [path])
    for r in rows:
        if "/" in r[0]:
            print(f"{r[0]:>11} throughput x{r[3]:.3f} p95 x{r[4]:.3f}")
        else:
            print(f"{r[0]:>11} drop={r[2]:.2f} throughput={r[3] / 1e6:.2f} Mbit/s p95={r[4]:.0f} ms")
    return [path]


# abr ------------------------------------------------------------------------

def cmd_abr(args) -> list[Path]:
    cfg = _config(args)
    out = _outdir(args)
    policies = ["mpc", "ngmpc", "buffer"] if args.policy == ["all"] else args.policy
    metrics = list(METRICS) if args.qoe == "all" else [args.qoe]
    spec = VideoSpec(n_chunks=args.chunks, chunk_s=args.chunk_s)
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    traces = []
    if args.trace:
        counts = _read_trace_arg(args.trace).counts
        cap = counts.astype(float) * MTU_BITS
        tel = _telemetry_from_csv(args.telemetry, len(cap)) if args.telemetry else cap
        traces.append((cap, tel))
    else:
        for i in range(args.synthetic):
            cap = step_trace(seed + i, duration_s=args.chunks * args.chunk_s * 3)
            traces.append((cap, cap))
    summary, sessions = [], []
    for pol in policies:
        for metric in metrics:
            params = QoeParams(metric)
            scores = []
            for run, (cap, tel) in enumerate(traces):
                policy = {"mpc": lambda: Mpc(params), "ngmpc": lambda: NgMpc(params, tel),
                          "buffer": lambda: BufferBased()}[pol]()
                s = download_sim(spec, policy, CapacityLink(cap))
                scores.append(qoe(s, params))
                sessions.extend((pol, metric, run, c.index, c.bitrate_bps, c.download_s, c.rebuffer_s, c.buffer_s)
                                for c in s.chunks)
            summary.append((pol, metric, float(np.mean(scores)), float(np.std(scores))))
    q_path, s_path = out / "qoe.csv", out / "sessions.csv"
    write_table(q_path, ["policy", "metric", "mean", "stdev"], summary)
    write_table(s_path, ["policy", "metric", "run", "chunk", "bitrate_bps", "download_s", "rebuffer_s",
                         "buffer_s"], sessions)
    write_manifest(out, "abr", args, seed, cfg.digest if cfg else "", [q_path, s_path])
    for row in summary:
        print(f"{row[0]:>7} {row[1]:>6} QoE mean={row[2]:.2f} sd={row[3]:.2f}")
    return [q_path, s_path]


# bench ------------------------------------------------------------------------

def cmd_bench(args) -> list[Path]:
    cfg = _config(args)
    out = _outdir(args)
    paths = [Path(p) for p in args.llr]
    attempts = []
    if paths:
        cells, reports, _ = decode_files(paths, cfg, args.bandwidth, args.pool, None)
        attempts = [r.attempts for c in cells for r in reports[c.cell_id]]
    hist = sorted(Counter(attempts).items())
    h_path, s_path = out / "attempts.csv", out / "attempts_summary.csv"
    write_table(h_path, ["attempts", "subframes"], hist)
    summary = []
    if attempts:
        summary.append((len(attempts), float(np.percentile(attempts, 50)),
                        float(np.percentile(attempts, 99)), max(attempts)))
    write_table(s_path, ["subframes", "p50", "p99", "max"], summary)
    write_manifest(out, "bench", args, cfg.seed if cfg else None, cfg.digest if cfg else "", [h_path, s_path])
    if summary:
        print(f"{summary[0][0]} subframes: p50={summary[0][1]:.0f} p99={summary[0][2]:.0f} max={summary[0][3]}")
    else:
        print("empty corpus")
    return [h_path, s_path]


# parser -----------------------------------------------------------------------

def _probability(text: str) -> float:
    p = float(text)
    if not 0.0 <= p <= 0.5:
        raise argparse.ArgumentTypeError("drop probability must be in [0, 0.5]")
    return p


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ngkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ngkit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", type=Path, help="experiment config file")
        sp.add_argument("--seed", type=int, help="overrides the config and NGKIT_SEED")
        sp.add_argument("--out", default=".", help="output directory")

    s = sub.add_parser("simulate", help="generate ground truth and LLR streams")
    common(s)
    s.add_argument("--duration", type=int, help="ms; overrides [run] duration_ms")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("decode", help="blind-decode LLR streams")
    common(s)
    s.add_argument("llr", nargs="+", help="LLR stream files, one per cell")
    s.add_argument("--bandwidth", type=int, choices=(5, 10, 20))
    s.add_argument("--pool", type=int, help="decoder threads per run")
    s.add_argument("--max-attempts", type=int, help="Viterbi attempts allowed per subframe")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("capacity", help="per-ms capacity of a target UE")
    common(s)
    s.add_argument("decoded", nargs="+", help="decoded or ground-truth message logs")
    s.add_argument("--target", help="C-RNTI, e.g. 0x0100")
    s.add_argument("--ca", action="store_true", help="aggregate every cell serving the target")
    s.add_argument("--drop", type=_probability, default=0.0, help="drop messages first")
    s.add_argument("--window", type=int, default=100, help="smoothing window (subframes)")
    s.add_argument("--bandwidth", type=int, choices=(5, 10, 20))
    s.set_defaults(func=cmd_capacity)

    s = sub.add_parser("emulate", help="congestion control over a delivery trace")
    common(s)
    s.add_argument("trace", help="delivery-opportunity trace (one ms timestamp per line)")
    s.add_argument("--cc", choices=("ngcc", "cubic", "both"), default="ngcc")
    s.add_argument("--duration", type=int, help="ms; default: trace length")
    s.add_argument("--prop-delay", type=int, default=10, help="one-way propagation delay (ms)")
    s.add_argument("--buffer", type=int, help="bottleneck buffer (packets); default unbounded")
    s.add_argument("--telemetry", help="capacity CSV whose smoothed column drives ngcc")
    s.add_argument("--messages", help="decoded log for --sweep-drop")
    s.add_argument("--target", help="C-RNTI for --sweep-drop")
    s.add_argument("--sweep-drop", help="start:stop:step drop probabilities, e.g. 0:0.5:0.1")
    s.add_argument("--window", type=int, default=100)
    s.add_argument("--bandwidth", type=int, choices=(5, 10, 20))
    s.set_defaults(func=cmd_emulate)

    s = sub.add_parser("abr", help="video streaming QoE")
    common(s)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--trace", help="delivery-opportunity trace")
    src.add_argument("--synthetic", type=int, help="number of seeded step-change traces")
    s.add_argument("--policy", nargs="+", choices=("mpc", "ngmpc", "buffer", "all"), default=["all"])
    s.add_argument("--qoe", choices=("linear", "log", "hd", "all"), default="all")
    s.add_argument("--telemetry", help="capacity CSV for ngmpc; default: the trace itself")
    s.add_argument("--chunks", type=int, default=48)
    s.add_argument("--chunk-s", type=float, default=4.0)
    s.set_defaults(func=cmd_abr)

    s = sub.add_parser("bench", help="decoding-attempt histogram")
    common(s)
    s.add_argument("llr", nargs="*", help="LLR stream files")
    s.add_argument("--bandwidth", type=int, choices=(5, 10, 20))
    s.add_argument("--pool", type=int)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if "all" in getattr(args, "policy", []) and len(args.policy) > 1:
            raise UsageError("--policy all cannot be combined with other policies")
    except UsageError as exc:
        print(f"ngkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"ngkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError, ValueError) as exc:
        print(f"ngkit: bad input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RuntimeError, AssertionError) as exc:
        print(f"ngkit: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
