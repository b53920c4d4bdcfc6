"""Experiment runner CLI.

Modes: single-scheme runs (default), multi-scheme comparison (``--compare``),
protocol server (``--serve``), default-config generation, and channel-trace
export.  Run artifacts per (scheme, seed): metrics.json plus slot/frame CSV
logs, all byte-stable for a given seed.  ``VRSIM_LOG`` controls verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baselines, protocol
from .channel import export_trace_csv, generate_trace
from .config import default_config_toml, load_config
from .env import ConfigError, Env, EnvConfig, EpisodeAborted, run_scenario

log = logging.getLogger("vrsim")

CONTROLLERS = ("equal", "pf", "urgency", "cc", "agent")

EXIT_BAD_CONFIG = 2
EXIT_ABORTED = 3

_METRICS = (
    ("avg_level", "higher"),
    ("switching_rate", "lower"),
    ("success_rate", "higher"),
)


def _parse_scheme(spec: str, cfg: EnvConfig):
    """Scheme string 'alloc+resolution' (or bare 'cc') -> (name, alloc_factory, res_factory)."""
    if spec == "cc":
        spec = "equal+cc"
    if "+" not in spec:
        raise ValueError(f"scheme {spec!r} must look like alloc+resolution, e.g. equal+fixed:3")
    alloc_name, res_spec = spec.split("+", 1)
    if alloc_name == "agent":
        raise ValueError("the agent controller attaches over the wire protocol; use --serve")
    if alloc_name not in baselines.ALLOCATION_POLICIES:
        raise ValueError(
            f"unknown allocation policy {alloc_name!r}; valid: {', '.join(baselines.ALLOCATION_POLICIES)}"
        )
    ladder = cfg.ladder()
    baselines.make_resolution_policy(res_spec, ladder, cfg.fps)  # validate eagerly
    alloc_factory = lambda: baselines.ALLOCATION_POLICIES[alloc_name](cfg)  # noqa: E731
    res_factory = lambda: baselines.make_resolution_policy(res_spec, ladder, cfg.fps)  # noqa: E731
    return f"{alloc_name}+{res_spec}", alloc_factory, res_factory


def write_run_artifacts(env: Env, scheme: str, outdir: Path) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    metrics = env.metrics_dict()
    metrics["scheme"] = scheme
    metrics["config_hash"] = protocol.config_hash(env.cfg)
    (outdir / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=2) + "\n")

    u = env.cfg.n_users
    with open(outdir / "slot_log.csv", "w", newline="") as fh:
        cols = ["slot", "renormalized", "success_term", "efficiency_term", "required_rate_term", "reward_total"]
        for prefix in ("share", "granted", "sent", "queue_bits"):
            cols += [f"{prefix}_u{i}" for i in range(u)]
        fh.write(",".join(cols) + "\n")
        for t in range(env.t):
            row = [str(t), str(int(env.slot_renorm[t]))]
            row += [repr(float(x)) for x in env.slot_reward[t]]
            for arr in (env.slot_shares, env.slot_granted, env.slot_sent, env.slot_queue_bits):
                row += [repr(float(x)) for x in arr[t]]
            fh.write(",".join(row) + "\n")

    frame_cols = [
        "frame", "user", "level", "prev_level", "size_bits", "delivered", "delay_slots",
        "mean_snr_db", "granted_bits", "consumed_bits", "level_term", "fail_term",
        "transition_term", "qoe_total",
    ]
    with open(outdir / "frame_log.csv", "w", newline="") as fh:
        fh.write(",".join(frame_cols) + "\n")
        for rec in env.frame_records:
            fh.write(",".join(repr(rec[c]) if isinstance(rec[c], float) else str(rec[c]) for c in frame_cols) + "\n")
    return metrics


def run_schemes(cfg: EnvConfig, schemes: list[str], seeds: list[int], out: Path) -> dict:
    """Run every (scheme, seed) pair; returns {scheme: [metrics per seed]}."""
    results: dict[str, list[dict]] = {}
    for spec in schemes:
        name, alloc_factory, res_factory = _parse_scheme(spec, cfg)
        per_seed = []
        for seed in seeds:
            env = run_scenario(cfg, alloc_factory(), res_factory, seed)
            metrics = write_run_artifacts(env, name, out / name / f"seed{seed}")
            print(
                f"{name} seed={seed} success_rate={metrics['success_rate']:.4f} "
                f"avg_level={metrics['avg_level']:.3f} switching_rate={metrics['switching_rate']:.4f}"
            )
            per_seed.append(metrics)
        results[name] = per_seed
    return results


def load_stored_results(schemes: list[str], seeds: list[int], out: Path) -> dict:
    results: dict[str, list[dict]] = {}
    for name in schemes:
        per_seed = []
        for seed in seeds:
            path = out / name / f"seed{seed}" / "metrics.json"
            if not path.exists():
                raise ConfigError(f"missing stored metrics {path}; run without --report-only first")
            per_seed.append(json.loads(path.read_text()))
        results[name] = per_seed
    return results


def build_report(results: dict) -> dict:
    """Mean metrics per scheme, normalized by the best scheme per metric.

    Zero-valued metrics are excluded from normalization (with a warning) so
    normalized values always land in (0, 1].
    """
    hashes = {m["config_hash"] for rows in results.values() for m in rows}
    if len(hashes) > 1:
        raise ConfigError(f"mismatched configs across schemes: {sorted(hashes)}")
    rows = {}
    for name, per_seed in results.items():
        rows[name] = {
            metric: sum(m[metric] for m in per_seed) / len(per_seed) for metric, _ in _METRICS
        }
    report = {"schemes": sorted(rows), "metrics": {}, "warnings": []}
    for metric, sense in _METRICS:
        values = {name: rows[name][metric] for name in rows}
        positive = {n: v for n, v in values.items() if v > 0}
        for name in values:
            if name not in positive:
                report["warnings"].append(f"{name}: zero {metric}, excluded from normalization")
        base = (max if sense == "higher" else min)(positive.values()) if positive else None
        normalized = {}
        for name, v in values.items():
            if name not in positive:
                normalized[name] = None
            else:
                normalized[name] = v / base if sense == "higher" else base / v
        report["metrics"][metric] = {"sense": sense, "raw": values, "normalized": normalized}
    return report


def write_report(report: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")

    lines = [f"{'scheme':<24}" + "".join(f"{m:>18}{'norm_' + m:>20}" for m, _ in _METRICS)]
    for name in report["schemes"]:
        cells = []
        for metric, _ in _METRICS:
            raw = report["metrics"][metric]["raw"][name]
            norm = report["metrics"][metric]["normalized"][name]
            cells.append(f"{raw:>18.4f}")
            cells.append(f"{norm:>20.4f}" if norm is not None else f"{'-':>20}")
        lines.append(f"{name:<24}" + "".join(cells))
    (out / "report.txt").write_text("\n".join(lines) + "\n")

    with open(out / "plot_data.csv", "w", newline="") as fh:
        fh.write("scheme,metric,kind,value\n")
        for metric, _ in _METRICS:
            for name in report["schemes"]:
                raw = report["metrics"][metric]["raw"][name]
                norm = report["metrics"][metric]["normalized"][name]
                fh.write(f"{name},{metric},raw,{raw!r}\n")
                if norm is not None:
                    fh.write(f"{name},{metric},normalized,{norm!r}\n")


def _parse_seeds(text: str | None, cfg: EnvConfig) -> list[int]:
    if not text:
        return [cfg.seed]
    seeds = [int(s) for s in text.replace(" ", "").split(",") if s]
    if not seeds:
        raise ValueError("empty seed list")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vrsim", description="wireless VR streaming simulator")
    p.add_argument("--config", help="TOML config file (defaults used when omitted)")
    p.add_argument("--controller", choices=CONTROLLERS, default="equal", help="allocation policy")
    p.add_argument("--resolution", default=None, help="resolution policy: fixed:K, threshold:T, or cc")
    p.add_argument("--seeds", default=None, help="comma-separated distinct seeds")
    p.add_argument("--out", default="vrsim_out", help="output directory")
    p.add_argument("--compare", nargs="+", metavar="SCHEME", help="compare >=2 schemes (alloc+resolution)")
    p.add_argument("--report-only", action="store_true", help="rebuild the comparison report from stored runs")
    p.add_argument("--serve", action="store_true", help="serve the agent wire protocol")
    p.add_argument("--port", type=int, default=protocol.DEFAULT_PORT)
    p.add_argument("--stdio", action="store_true", help="serve over stdin/stdout instead of TCP")
    p.add_argument("--multi-session", action="store_true", help="one env per concurrent connection")
    p.add_argument("--paper-reward", action="store_true", help="zero upgrade penalty (degradation-only reward)")
    p.add_argument("--write-default-config", metavar="PATH", help="write a commented default config and exit")
    p.add_argument("--export-channel-trace", metavar="PATH", help="export the channel trace CSV and exit")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("VRSIM_LOG", "WARNING").upper())
    args = build_parser().parse_args(argv)

    if args.write_default_config:
        Path(args.write_default_config).write_text(default_config_toml())
        print(f"wrote {args.write_default_config}")
        return 0

    try:
        cfg = load_config(args.config) if args.config else EnvConfig()
        if args.paper_reward:
            cfg = replace(cfg, qoe=replace(cfg.qoe, theta_up=0.0))
        seeds = _parse_seeds(args.seeds, cfg)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG

    if args.export_channel_trace:
        # same stream split as Env.reset, so the export matches a run at this seed
        root = np.random.SeedSequence(seeds[0]).spawn(2)[0]
        trace = generate_trace(
            cfg.n_slots, cfg.n_users, cfg.channel, cfg.mobility, cfg.slot_len, root,
            fast_fading=cfg.fast_fading, kernel=cfg.kernel,
        )
        export_trace_csv(trace, args.export_channel_trace)
        print(f"wrote {args.export_channel_trace}")
        return 0

    if args.serve:
        if args.stdio:
            protocol.serve_stdio(cfg)
        else:
            log.info("serving on port %d", args.port)
            protocol.serve_tcp(cfg, port=args.port, multi_session=args.multi_session)
        return 0

    out = Path(args.out)
    try:
        if args.compare:
            if len(args.compare) < 2:
                print("error: need >= 2 schemes to compare", file=sys.stderr)
                return EXIT_BAD_CONFIG
            schemes = [_parse_scheme(s, cfg)[0] for s in args.compare]
            if args.report_only:
                results = load_stored_results(schemes, seeds, out)
            else:
                results = run_schemes(cfg, args.compare, seeds, out)
            report = build_report(results)
            write_report(report, out)
            for warning in report["warnings"]:
                print(f"warning: {warning}", file=sys.stderr)
            print((out / "report.txt").read_text(), end="")
            return 0

        resolution = args.resolution
        if args.controller == "cc":
            if resolution is not None:
                print("error: --controller cc pairs equal allocation with cc resolution; drop --resolution", file=sys.stderr)
                return EXIT_BAD_CONFIG
            scheme = "cc"
        else:
            scheme = f"{args.controller}+{resolution or 'fixed:0'}"
        run_schemes(cfg, [scheme], seeds, out)
        return 0
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except EpisodeAborted as exc:
        print(f"episode aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
