#!/usr/bin/env python3
"""Config-driven experiment runner.

Reads experiment configs from config/experiments/*.yaml and runs
``mdbrief simulate`` for each camera model, one output directory per config.
A summary with the final distances and recognition rates is written to
<output-dir>/experiment_summary.json.
"""
import argparse, csv, json, subprocess, sys, time
from pathlib import Path

from mdbrief.config import load_experiments


def last_row(path: Path):
    """Final row of a CSV table as a dict, or None when the table is missing."""
    if not path.exists():
        return None
    with open(path, newline='') as f:
        rows = list(csv.DictReader(f))
    return rows[-1] if rows else None


def run_experiment(name, config_path, args):
    """Run ``mdbrief simulate`` for one config."""
    out_dir = args.output_dir / name
    cmd = [sys.executable, "-m", "mdbrief.cli", "simulate",
           "--config", str(config_path),
           "--output-dir", str(out_dir),
           "--experiment", args.experiment]
    if args.threads:
        cmd += ["--threads", str(args.threads)]
    if args.seed is not None:
        cmd += ["--seed", str(args.seed)]
    if args.verbose:
        cmd.append("-v")

    print(f"\n{'='*80}")
    print(f"Simulating: {name} ({config_path})")
    print(f"{'='*80}\n")

    start = time.perf_counter()
    result = subprocess.run(cmd, capture_output=not args.verbose)
    elapsed = time.perf_counter() - start
    if not args.verbose and result.stdout:
        print(result.stdout.decode())
    if result.returncode != 0:
        if not args.verbose and result.stderr:
            print(result.stderr.decode())
        status_map = {1: "usage_error", 2: "parse_error", 3: "runtime_error"}
        return {"name": name, "config": str(config_path),
                "status": status_map.get(result.returncode, f"exit_{result.returncode}"),
                "seconds": round(elapsed, 1)}
    return {"name": name, "config": str(config_path), "status": "ok",
            "seconds": round(elapsed, 1), "output": str(out_dir),
            "evolution": last_row(out_dir / "evolution.csv"),
            "recognition": last_row(out_dir / "recognition.csv")}


def main():
    p = argparse.ArgumentParser(description="Config-driven experiment runner")
    p.add_argument("--config-dir",  type=Path, default=Path("config/experiments"))
    p.add_argument("--output-dir",  type=Path, default=Path("results"))
    p.add_argument("--models",      nargs="+", help="Filter configs by name (e.g. fisheye radial)")
    p.add_argument("--experiment",  choices=["evolution", "recognition", "all"], default="all")
    p.add_argument("--threads",     type=int)
    p.add_argument("--seed",        type=int)
    p.add_argument("--verbose",     action="store_true")
    args = p.parse_args()

    configs = {name: cfg.source for name, cfg in load_experiments(args.config_dir).items()}
    print(f"Loaded configs: {', '.join(configs.keys())}")
    if args.models:
        configs = {k: v for k, v in configs.items() if k in args.models}
        print(f"Filtered to: {', '.join(configs.keys())}")

    results = [run_experiment(name, path, args) for name, path in configs.items()]

    args.output_dir.mkdir(parents=True, exist_ok=True)
    summary = args.output_dir / "experiment_summary.json"
    with open(summary, 'w') as f:
        json.dump(results, f, indent=2)

    counts = {}
    for r in results:
        counts[r['status']] = counts.get(r['status'], 0) + 1
    print(f"\n{'='*80}\nExperiments complete: {summary}")
    print(f"Total: {len(results)}")
    for s, n in sorted(counts.items()):
        print(f"  {s}: {n}")
    print('='*80)
    return 0 if counts.get("ok", 0) == len(results) else 1

if __name__ == "__main__":
    sys.exit(main())
