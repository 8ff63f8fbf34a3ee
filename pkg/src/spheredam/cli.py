"""Command-line entry point: scan, trial, oracle, compare.

Every command writes its primary CSVs plus a manifest (config snapshot,
master seed, code version, per-cell timings, output digests) sufficient
to reproduce those CSVs byte for byte. Exit codes: 0 success, 1 config
error, 2 runtime/numerical failure, 3 partial cell failures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_memory_budget, serialize_config
from .energy import check_retrieval_basin
from .geometry import sample_patterns
from .oracle import OracleSpec, QuadratureError, curve_to_csv, phi_eq_curve
from .sampler import TrialConfig, TrialSetupError, run_trial
from .scan import (
    classify,
    map_to_csv,
    n_of_alpha,
    m_of_alpha,
    oracle_for_map,
    phase_to_csv,
    run_grid,
)
from .scan import chain_seed, pattern_seed

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3

PLOT_SCRIPT = """\
# gnuplot script for the alignment map
set datafile separator ','
set xlabel 'alpha'
set ylabel 'T'
set view map
splot 'map.csv' every ::1 using 1:2:6 with points pointtype 5 pointsize 2 palette
"""


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_manifest(out_dir: Path, command: str, config_text: str, seed: int,
                    workers: int, outputs: list[str], cell_timings=None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "master_seed": seed,
        "workers": workers,
        "config_text": config_text,
        "outputs": {name: _digest(out_dir / name) for name in outputs},
        "cell_timings": cell_timings or [],
        "created": datetime.now(timezone.utc).isoformat(),
    }
    _write(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")


def _resolve_workers(cfg_workers: int, flag: int | None) -> int:
    if flag is not None:
        value = flag
    elif os.environ.get("SPHEREDAM_WORKERS"):
        value = int(os.environ["SPHEREDAM_WORKERS"])
    else:
        value = cfg_workers
    if value <= 0:
        value = os.cpu_count() or 1
    return value


def _resolve_budget(cfg: RunConfig, flag: str | None) -> int:
    if flag is not None:
        return parse_memory_budget(flag, "--memory-budget")
    env = os.environ.get("SPHEREDAM_MEMORY_BUDGET")
    if env:
        return parse_memory_budget(env, "SPHEREDAM_MEMORY_BUDGET")
    return cfg.schedule.memory_budget


def _load(args) -> tuple[RunConfig, str]:
    cfg = load_config(args.config)
    text = Path(args.config).read_text(encoding="utf-8")
    if args.seed is not None:
        cfg = _replace_seed(cfg, args.seed)
    return cfg, text


def _replace_seed(cfg: RunConfig, seed: int) -> RunConfig:
    from dataclasses import replace
    return replace(cfg, seed=seed)


def cmd_scan(args) -> int:
    cfg, config_text = _load(args)
    workers = _resolve_workers(cfg.workers, args.workers)
    budget = _resolve_budget(cfg, args.memory_budget)
    from dataclasses import replace
    schedule = replace(cfg.schedule, memory_budget=budget)

    for alpha in schedule.alpha_grid:  # validate the whole grid up front
        n_of_alpha(alpha, m_of_alpha(alpha, schedule))
    warned = set()
    for alpha in schedule.alpha_grid:
        n = n_of_alpha(alpha, m_of_alpha(alpha, schedule))
        message = check_retrieval_basin(cfg.kernel, n)
        if message and message not in warned:
            warned.add(message)
            print(f"warning: {message}", file=sys.stderr)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    amap = run_grid(schedule, cfg.kernel, cfg.seed, workers=workers)
    phi_by_cell = oracle_for_map(amap, points=cfg.oracle.points)
    phases = classify(amap, phi_by_cell, cfg.threshold_fraction)

    _write(out_dir / "map.csv", map_to_csv(amap, phases))
    _write(out_dir / "phase.csv", phase_to_csv(phases))
    _write(out_dir / "plot.gp", PLOT_SCRIPT)
    timings = [
        {"alpha": c.alpha, "T": c.temperature, "seconds": round(c.seconds, 6)}
        for c in amap.cells
    ]
    _write_manifest(out_dir, "scan", config_text, cfg.seed, workers,
                    ["map.csv", "phase.csv"], timings)

    failed = [c for c in amap.cells if c.n_failed]
    if failed:
        for c in failed:
            print(
                f"cell alpha={c.alpha:g} T={c.temperature:g}: "
                f"{c.n_failed} failed trial(s): {c.error}",
                file=sys.stderr,
            )
        if any(c.n_trials == 0 for c in failed):
            print("scan finished with empty cells", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_trial(args) -> int:
    cfg, config_text = _load(args)
    t = cfg.trial
    for key, value in (("n", t.n), ("m", t.m), ("temperature", t.temperature)):
        if value is None:
            raise ConfigError(f"[trial] {key}: required by the trial command")

    message = check_retrieval_basin(cfg.kernel, t.n)
    if message:
        print(f"warning: {message}", file=sys.stderr)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    patterns = sample_patterns(t.n, t.m, pattern_seed(cfg.seed, 0, 0, 0))
    config = TrialConfig(
        temperature=t.temperature,
        seed=chain_seed(cfg.seed, 0, 0, 0),
        n_eq=t.n_eq,
        n_samp=t.n_samp,
        phi_init_range=(t.phi_init_low, t.phi_init_high),
    )

    rows = []
    result = run_trial(
        patterns, cfg.kernel, config,
        trace=lambda step, phi1, energy, accepted, _state:
            rows.append((step, phi1, energy, accepted)),
    )
    buf = io.StringIO()
    buf.write("step,phi1,energy,accepted\n")
    for step, phi1, energy_v, accepted in rows:
        buf.write(f"{step},{phi1:.17g},{energy_v:.17g},{int(accepted)}\n")
    _write(out_dir / "trace.csv", buf.getvalue())
    _write_manifest(out_dir, "trial", config_text, cfg.seed, 1, ["trace.csv"])

    print(f"mean_alignment = {result.mean_alignment:.17g}")
    print(f"acceptance_rate = {result.acceptance_rate:.17g}")
    print(f"final_alignment = {result.final_alignment:.17g}")
    print(f"wall_rejections = {result.wall_rejections}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg, config_text = _load(args)
    o = cfg.oracle
    if o.n is None:
        raise ConfigError("[oracle] n: required by the oracle command")
    temps = o.temp_grid if o.temp_grid is not None else cfg.schedule.temp_grid

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve = phi_eq_curve(o.n, cfg.kernel, temps, points=o.points)
    _write(out_dir / "oracle.csv", curve_to_csv(curve))
    _write_manifest(out_dir, "oracle", config_text, cfg.seed, 1, ["oracle.csv"])
    return EXIT_OK


def _read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cmd_compare(args) -> int:
    if len(args.alpha) != len(args.oracle):
        print("compare: need one --oracle per --alpha", file=sys.stderr)
        return EXIT_CONFIG
    map_rows = _read_csv(Path(args.map))
    if not map_rows or "alpha" not in map_rows[0]:
        print(f"compare: {args.map} is not a map CSV", file=sys.stderr)
        return EXIT_CONFIG

    out_lines = ["alpha,T,mean_alignment,phi_eq,abs_delta,in_verdict"]
    status = EXIT_OK
    for alpha, oracle_path in zip(args.alpha, args.oracle):
        rows = [r for r in map_rows if abs(float(r["alpha"]) - alpha) < 1e-9]
        if not rows:
            available = sorted({float(r["alpha"]) for r in map_rows})
            print(
                f"compare: alpha = {alpha:g} not present in {args.map}; "
                f"available: {', '.join(f'{a:g}' for a in available)}",
                file=sys.stderr,
            )
            return EXIT_CONFIG
        oracle_rows = _read_csv(Path(oracle_path))
        curve = {float(r["T"]): float(r["phi_eq"]) for r in oracle_rows}

        print(f"alpha = {alpha:g}")
        print(f"{'T':>8} {'mean':>12} {'phi_eq':>12} {'|delta|':>12}  note")
        worst = None
        for r in sorted(rows, key=lambda r: float(r["T"])):
            t = float(r["T"])
            match = [v for tv, v in curve.items() if abs(tv - t) < 1e-9]
            if not match:
                print(f"compare: no oracle value at T = {t:g} in {oracle_path}",
                      file=sys.stderr)
                return EXIT_CONFIG
            ref = match[0]
            mean = float(r["mean_alignment"])
            delta = abs(mean - ref)
            in_verdict = r.get("phase", "unknown") == "retrieval"
            note = "" if in_verdict else "post-transition (excluded)"
            print(f"{t:8.4g} {mean:12.6f} {ref:12.6f} {delta:12.6f}  {note}")
            out_lines.append(
                f"{alpha:.17g},{t:.17g},{mean:.17g},{ref:.17g},{delta:.17g},{int(in_verdict)}"
            )
            if in_verdict and (worst is None or delta > worst):
                worst = delta
        if worst is None:
            print("  verdict: no pre-transition rows to compare")
        else:
            print(f"  verdict: max |delta| = {worst:.6f} in the pre-transition region")

    if args.out_csv:
        _write(Path(args.out_csv), "\n".join(out_lines) + "\n")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spheredam",
        description="Monte Carlo retrieval phase maps for dense associative "
                    "memories on the N-sphere",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, help="config file path")
        p.add_argument("--out", default=".", help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=None,
                           help="master seed (overrides [run] seed)")

    p_scan = sub.add_parser("scan", help="run an (alpha, T) grid scan")
    common(p_scan)
    p_scan.add_argument("--workers", type=int, default=None,
                        help="worker processes (0 = available parallelism)")
    p_scan.add_argument("--memory-budget", default=None,
                        help="bytes for in-flight pattern sets, K/M/G suffix allowed")
    p_scan.set_defaults(func=cmd_scan)

    p_trial = sub.add_parser("trial", help="run one trial with a full trace")
    common(p_trial)
    p_trial.set_defaults(func=cmd_trial)

    p_oracle = sub.add_parser("oracle", help="write a phi_eq(T) curve")
    common(p_oracle)
    p_oracle.set_defaults(func=cmd_oracle)

    p_cmp = sub.add_parser("compare", help="compare a map against oracle curves")
    p_cmp.add_argument("--map", required=True, help="map.csv from a scan")
    p_cmp.add_argument("--alpha", type=float, action="append", default=[],
                       help="alpha value to compare (repeatable)")
    p_cmp.add_argument("--oracle", action="append", default=[],
                       help="oracle CSV paired with the matching --alpha")
    p_cmp.add_argument("--out-csv", default=None, help="write the comparison table")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, TrialSetupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
