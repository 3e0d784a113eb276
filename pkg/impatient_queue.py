#!/usr/bin/env python3
"""
Impatient Queue — stationary loads and virtual waiting time of FCFS PH/M/c+D
=============================================================================
Batch front end for the spectral solver and its simulation oracle:
  1. analyze   solve the model, write solution JSON, density grid CSV, summary
  2. simulate  run the workload-recursion simulation, write estimate CSV
  3. compare   run both and test them against each other (KS and z-scores)
  4. check     print every assumption margin and solution residual

Exit codes: 0 success, 1 threshold failure, 2 input error,
3 assumption violation or numerical failure.

Usage:
    python impatient_queue.py analyze --model models/mm1_impatient.json --out output
    python impatient_queue.py compare --model models/erlang2.json --seed 7 --arrivals 1000000
"""

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from core.config import (DEFAULT_ARRIVALS, DEFAULT_BATCHES, DEFAULT_GRID,
                         DEFAULT_REPLICATIONS, DEFAULT_SEED, DEFAULT_TOLERANCES, Tolerances)
from core.errors import (EXIT_ASSUMPTION, EXIT_INPUT, EXIT_OK, EXIT_THRESHOLD,
                         AssumptionViolation, ModelError, NumericalError)
from core.load_solver import diagnose, export_solution_json, json_safe, solve
from core.phase_type import QueueModel, load_model_json
from core.simulator import SimConfig, compare, run_sim, write_estimate_csv
from core.waiting import (busy_servers, density_table, virtual_wait_distribution,
                          wait_decomposition, write_density_csv)

# ──────────────────────────────────────────────
# Constants
# ──────────────────────────────────────────────
COMMANDS = ("analyze", "simulate", "compare", "check")
DEFAULT_OUT = "output"

SOLUTION_FILE = "solution.json"
DENSITY_FILE = "density_grid.csv"
SUMMARY_FILE = "summary.json"
SIMULATION_FILE = "simulation.csv"
REPORT_FILE = "report.json"
CHECK_FILE = "check.json"

STATUS_ICON = {"pass": "✅", "warn": "⚠️ ", "fail": "❌"}


@dataclass(frozen=True)
class RunSpec:
    """One CLI invocation, validated."""
    command: str
    model_path: Path
    out_dir: Path
    grid: int
    tol: Tolerances
    sim: SimConfig
    verbose: bool = False


def build_run_spec(args: argparse.Namespace) -> RunSpec:
    """
    Raises:
        FileNotFoundError: model path missing
        ValueError: grid < 2, negative tolerance, bad simulation sizes
    """
    model_path = Path(args.model)
    if not model_path.exists():
        raise FileNotFoundError(f"Model file not found: {model_path}")
    if args.grid < 2:
        raise ValueError(f"--grid must be >= 2, got {args.grid}")
    tol = DEFAULT_TOLERANCES.with_overrides(
        tol_residual=args.tol_residual, tol_ks=args.tol_ks, tol_z=args.tol_z,
        tol_zero=args.tol_zero, tol_nonzero=args.tol_nonzero, phi_order=args.phi_order)
    sim = SimConfig(seed=args.seed, warmup_arrivals=args.warmup,
                    measured_arrivals=args.arrivals, replications=args.replications,
                    batches=args.batches, workers=args.workers)
    return RunSpec(command=args.command, model_path=model_path, out_dir=Path(args.out),
                   grid=args.grid, tol=tol, sim=sim, verbose=args.verbose)


def _write_json(data: dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(json_safe(data), f, indent=2, ensure_ascii=False, allow_nan=False)
    return path


def _describe(model: QueueModel) -> None:
    print(f"   phases m = {model.m}, servers c = {model.c}, "
          f"μ = {model.mu:g}, τ = {model.tau:g}")
    print(f"   arrival rate λ = {model.arrival_rate:.6g}, offered load ρ = {model.offered_load:.4f}")


# ──────────────────────────────────────────────
# 1. analyze
# ──────────────────────────────────────────────
def analyze(model: QueueModel, spec: RunSpec) -> dict:
    """Solve and evaluate; returns the summary plus in-memory results."""
    sol = solve(model, spec.tol, strict=True, verbose=spec.verbose)
    atom0, continuous, tail = wait_decomposition(sol, spec.tol)
    table = density_table(sol, spec.grid, spec.tol, strict=True)
    summary = {
        "atom0": atom0,
        "continuous": continuous,
        "tail": tail,
        "total": atom0 + continuous + tail,
        "p": table["p"],
        "mean_virtual_wait": virtual_wait_distribution(sol, spec.tol).mean(),
        "busy_servers": busy_servers(sol, spec.tol).tolist(),
        "representation_gap": table["representation_gap"],
        "bridge_residual": table["bridge"]["residual"],
        "diagnostics_status": sol.diagnostics["status"],
        "c1_reading": sol.diagnostics["c1_reading"],
    }
    return {"solution": sol, "table": table, "summary": summary}


def cmd_analyze(spec: RunSpec) -> int:
    model = load_model_json(spec.model_path)
    _describe(model)
    print("\n🔢 Solving for the stationary load density...")
    t0 = time.time()
    result = analyze(model, spec)
    print(f"   done in {(time.time() - t0) * 1000:.1f} ms")

    out = spec.out_dir
    export_solution_json(result["solution"], out / SOLUTION_FILE)
    table = result["table"]
    write_density_csv(out / DENSITY_FILE, table["v"], table["f_spectral"], table["f_matrix_exp"])
    _write_json(result["summary"], out / SUMMARY_FILE)

    s = result["summary"]
    print("\n📊 Virtual waiting time")
    print(f"   P(V = 0)      = {s['atom0']:.6f}")
    print(f"   P(0 < V < τ)  = {s['continuous']:.6f}")
    print(f"   P(V ≥ τ)      = {s['tail']:.6f}")
    print(f"   E[V]          = {s['mean_virtual_wait']:.6f}")
    print(f"   representation gap = {s['representation_gap']:.2e}, "
          f"diagnostics: {s['diagnostics_status']}")
    print(f"\n✅ Wrote {out / SOLUTION_FILE}, {out / DENSITY_FILE}, {out / SUMMARY_FILE}")
    return EXIT_OK


# ──────────────────────────────────────────────
# 2. simulate
# ──────────────────────────────────────────────
def cmd_simulate(spec: RunSpec) -> int:
    model = load_model_json(spec.model_path)
    _describe(model)
    sim = spec.sim
    print(f"\n🎲 Simulating {sim.replications} x {sim.measured_arrivals} arrivals "
          f"(seed {sim.seed}, warmup {sim.resolve_warmup(model)})...")
    est = run_sim(model, sim, progress=True)
    path = write_estimate_csv(est, spec.out_dir / SIMULATION_FILE)
    print(f"   P(V = 0)  ≈ {est.atom0_hat:.6f} ± {est.atom0_se:.2e}")
    print(f"   P(V ≥ τ)  ≈ {est.loss_hat:.6f} ± {est.loss_se:.2e}")
    print(f"   lost customers ≈ {est.arrival_loss_hat:.6f} ± {est.arrival_loss_se:.2e}")
    print(f"\n✅ Wrote {path}")
    return EXIT_OK


# ──────────────────────────────────────────────
# 3. compare
# ──────────────────────────────────────────────
def cmd_compare(spec: RunSpec) -> int:
    model = load_model_json(spec.model_path)
    _describe(model)
    print("\n🔢 Solving...")
    result = analyze(model, spec)
    dist = virtual_wait_distribution(result["solution"], spec.tol)

    sim = spec.sim
    print(f"🎲 Simulating {sim.replications} x {sim.measured_arrivals} arrivals (seed {sim.seed})...")
    est = run_sim(model, sim, progress=True)
    write_estimate_csv(est, spec.out_dir / SIMULATION_FILE)

    report = compare(dist, est, spec.tol)
    report["seed"] = sim.seed
    report["measured_arrivals"] = sim.measured_arrivals
    report["replications"] = sim.replications
    path = _write_json(report, spec.out_dir / REPORT_FILE)

    print("\n📋 Comparison")
    print(f"   {'✅' if report['checks']['ks'] else '❌'} KS distance   = {report['ks']:.5f} "
          f"(limit {spec.tol.tol_ks})")
    for key, label in (("atom0", "P(V = 0)"), ("loss", "P(V ≥ τ)")):
        r = report[key]
        print(f"   {'✅' if report['checks'][key] else '❌'} {label:<12} analytic {r['analytic']:.6f} "
              f"sim {r['simulated']:.6f}  z = {r['z']:+.2f} (limit {spec.tol.tol_z})")
    print(f"\n{'✅ All thresholds passed' if report['passed'] else '❌ Threshold failure'} → {path}")
    return EXIT_OK if report["passed"] else EXIT_THRESHOLD


# ──────────────────────────────────────────────
# 4. check
# ──────────────────────────────────────────────
def cmd_check(spec: RunSpec) -> int:
    model = load_model_json(spec.model_path)
    _describe(model)
    print()
    report = diagnose(model, spec.tol)
    for it in report["items"]:
        value = it["value"]
        shown = "n/a" if value is None else (f"{value:.3e}" if isinstance(value, float) else str(value))
        note = f"  ({it['message']})" if "message" in it else ""
        print(f"{STATUS_ICON[it['status']]} {it['name']:<45} {shown}{note}")
    path = _write_json(report, spec.out_dir / CHECK_FILE)
    print(f"\nOverall: {STATUS_ICON[report['status']]} {report['status']} → {path}")
    return EXIT_ASSUMPTION if report["status"] == "fail" else EXIT_OK


HANDLERS = {"analyze": cmd_analyze, "simulate": cmd_simulate,
            "compare": cmd_compare, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Stationary loads and virtual waiting time of FCFS PH/M/c queues "
                    "with deterministic impatience",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python impatient_queue.py analyze  --model models/mm1_impatient.json
  python impatient_queue.py simulate --model models/erlang2.json --arrivals 1000000 --seed 7
  python impatient_queue.py compare  --model models/hyperexp.json --replications 2 --workers 2
  python impatient_queue.py check    --model models/near_degenerate.json
        """,
    )
    parser.add_argument("command", choices=COMMANDS, help="what to run")
    parser.add_argument("--model", "-m", required=True, help="model JSON file")
    parser.add_argument("--out", "-o", default=DEFAULT_OUT,
                        help=f"output directory (default: {DEFAULT_OUT})")
    parser.add_argument("--grid", type=int, default=DEFAULT_GRID,
                        help=f"density grid points on (0, tau) (default: {DEFAULT_GRID})")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help=f"simulation seed, 64-bit unsigned (default: {DEFAULT_SEED})")
    parser.add_argument("--arrivals", type=int, default=DEFAULT_ARRIVALS,
                        help=f"measured arrivals per replication (default: {DEFAULT_ARRIVALS})")
    parser.add_argument("--replications", type=int, default=DEFAULT_REPLICATIONS,
                        help=f"independent replications (default: {DEFAULT_REPLICATIONS})")
    parser.add_argument("--warmup", type=int, default=None,
                        help="warmup arrivals (default: max(1e5, 50·c·mean service/mean inter-arrival))")
    parser.add_argument("--batches", type=int, default=DEFAULT_BATCHES,
                        help=f"batches per replication for standard errors (default: {DEFAULT_BATCHES})")
    parser.add_argument("--workers", type=int, default=1,
                        help="processes for replications (default: 1)")
    parser.add_argument("--tol-residual", type=float, default=None,
                        help=f"balance and identity residual limit (default: {DEFAULT_TOLERANCES.tol_residual})")
    parser.add_argument("--tol-ks", type=float, default=None,
                        help=f"KS distance limit (default: {DEFAULT_TOLERANCES.tol_ks})")
    parser.add_argument("--tol-z", type=float, default=None,
                        help=f"|z| limit for atom and loss (default: {DEFAULT_TOLERANCES.tol_z})")
    parser.add_argument("--tol-zero", type=float, default=None,
                        help=f"singular-value ratio treated as zero (default: {DEFAULT_TOLERANCES.tol_zero})")
    parser.add_argument("--tol-nonzero", type=float, default=None,
                        help=f"singular-value ratio treated as nonzero (default: {DEFAULT_TOLERANCES.tol_nonzero})")
    parser.add_argument("--phi-order", choices=("EY", "YE"), default=None,
                        help="product order for the nullvector route (default: EY)")
    parser.add_argument("--verbose", "-v", action="store_true", help="print DEBUG lines")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    print("=" * 60)
    print("  ⏳ Impatient Queue — PH/M/c+D stationary solver")
    print(f"  🔧 command: {args.command}")
    print("=" * 60)

    try:
        spec = build_run_spec(args)
        return HANDLERS[spec.command](spec)
    except ModelError as e:
        print(f"❌ Input error: {e}", file=sys.stderr, flush=True)
        return EXIT_INPUT
    except (NumericalError, np.linalg.LinAlgError) as e:
        # LinAlgError subclasses ValueError but never comes from the input
        print(f"❌ Numerical failure: {e}", file=sys.stderr, flush=True)
        return EXIT_ASSUMPTION
    except (FileNotFoundError, ValueError) as e:
        print(f"❌ Input error: {e}", file=sys.stderr, flush=True)
        return EXIT_INPUT
    except AssumptionViolation as e:
        print(f"❌ {e}", file=sys.stderr, flush=True)
        return EXIT_ASSUMPTION


if __name__ == "__main__":
    sys.exit(main())
