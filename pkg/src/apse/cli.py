"""Command-line entry point.

Subcommands::

    apse validate   --network N --measurements L
    apse synthesize --experiment E --out profiles.csv
    apse estimate   --network N --measurements L --profiles P [--profile-id K] --out DIR
    apse batch      --experiment E --out DIR [--compare both] [--seed S] ...

Exit codes: 0 success, 1 usage or parse error, 2 non-convergence or
observability failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ApseError, MalformedGraphError, MeasurementError, ObservabilityError
from .experiment import COMPARISONS, Experiment, load_experiment
from .grid import load_feeder
from .measurements import CovarianceModel, load_layout, read_profiles, validate_redundancy, write_profiles
from .physics import PhysicsModel
from .rom import save_basis
from .solver import SolverConfig, gnvqr_solve, weighted_qr
from .uq import APSE, run_batch, summarize

EXIT_OK, EXIT_USAGE, EXIT_SOLVE, EXIT_IO = 0, 1, 2, 3
SOLVED_FRACTION = 0.99


class _Fail(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _load_model(network, measurements):
    try:
        feeder = load_feeder(network)
        mset, sig = load_layout(measurements, feeder)
    except FileNotFoundError as exc:
        raise _Fail(EXIT_IO, f"cannot read {exc.filename}") from None
    except json.JSONDecodeError as exc:
        raise _Fail(EXIT_USAGE, f"invalid JSON: {exc}") from None
    except (MalformedGraphError, MeasurementError, KeyError, TypeError, ValueError) as exc:
        raise _Fail(EXIT_USAGE, f"invalid input: {exc}") from None
    cov = CovarianceModel.from_sigmas(mset, sig["mag"], sig["flow"], sig["inj"])
    return feeder, mset, cov


def cmd_validate(args) -> int:
    feeder, mset, cov = _load_model(args.network, args.measurements)
    model = feeder.model
    ok, diag = validate_redundancy(mset, model.p)
    print(f"buses {model.n}  lines {model.graph.m}  slack {feeder.bus_ids[model.slack]}  connected yes")
    print(f"rows m+f+s = {diag['rows']} ({mset.n_mag}+{mset.n_flow}+{mset.n_inj})  2p = {diag['two_p']}"
          f"  redundancy {100 * diag['redundancy_ratio']:.2f}%")
    if not ok:
        raise _Fail(EXIT_SOLVE, f"redundancy check failed: {diag['rows']} rows do not exceed 2p = {diag['two_p']}")
    physics = PhysicsModel(model, mset)
    try:
        _, R = weighted_qr(physics.jacobian_polar(model.flat_state()), cov.weight_sqrt)
    except ObservabilityError as exc:
        raise _Fail(EXIT_SOLVE, f"not observable at flat start: {exc}") from None
    d = np.abs(np.diag(R))
    print(f"observable at flat start (|diag R| min/max = {d.min() / d.max():.3e})")
    return EXIT_OK


def _solver_config(args) -> SolverConfig:
    return SolverConfig() if args.eps_n is None else SolverConfig(step_tol=args.eps_n)


def cmd_estimate(args) -> int:
    feeder, mset, cov = _load_model(args.network, args.measurements)
    physics = PhysicsModel(feeder.model, mset)
    ids = feeder.bus_ids
    try:
        profiles = read_profiles(args.profiles, mset, mset.row_labels(ids))
    except FileNotFoundError as exc:
        raise _Fail(EXIT_IO, f"cannot read {exc.filename}") from None
    except (MeasurementError, ValueError) as exc:
        raise _Fail(EXIT_USAGE, f"invalid profiles file: {exc}") from None
    if not profiles:
        raise _Fail(EXIT_USAGE, "profiles file has no rows")
    if args.profile_id is None:
        profile = profiles[0]
    else:
        match = [p for p in profiles if p.profile_id == args.profile_id]
        if not match:
            raise _Fail(EXIT_USAGE, f"no profile with id {args.profile_id}")
        profile = match[0]
    try:
        rep = gnvqr_solve(feeder.model.flat_state(), profile, physics, cov, _solver_config(args))
    except ObservabilityError as exc:
        raise _Fail(EXIT_SOLVE, str(exc)) from None

    r = physics.h(rep.final_state) - profile.values
    wr = cov.weight_sqrt * r
    report = {
        "profile_id": profile.profile_id,
        "converged": rep.converged,
        "iterations": rep.iterations,
        "final_step_norm": rep.final_step_norm,
        "step_norms": rep.step_norms,
        "reason": rep.reason,
        "weighted_sse": float(wr @ wr),
        "max_abs_residual": float(np.max(np.abs(r))),
        "max_abs_weighted_residual": float(np.max(np.abs(wr))),
    }
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "state.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bus", "V", "theta"])
            vs = feeder.model.slack_voltage
            full_v = feeder.model.full_voltage(rep.final_state.complex)
            for k in range(feeder.model.n):
                v = vs if k == feeder.model.slack else full_v[k]
                w.writerow([ids[k], repr(float(abs(v))), repr(float(np.angle(v)))])
        with open(out / "report.json", "w") as fh:
            json.dump(report, fh, indent=1)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write output: {exc}") from None
    print(f"profile {profile.profile_id}: {'converged' if rep.converged else 'NOT converged'} in "
          f"{rep.iterations} iterations, final step {rep.final_step_norm:.3e}")
    return EXIT_OK if rep.converged else EXIT_SOLVE


def _experiment(args):
    try:
        cfg = load_experiment(args.experiment)
    except FileNotFoundError as exc:
        raise _Fail(EXIT_IO, f"cannot read {exc.filename}") from None
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        raise _Fail(EXIT_USAGE, f"invalid experiment file: {exc}") from None
    seed = getattr(args, "seed", None)
    try:
        cfg = cfg.with_overrides(
            sample_seed=seed,
            noise_seed=None if seed is None else seed + 1,
            samples=getattr(args, "samples", None),
            eps_n=getattr(args, "eps_n", None),
            expansion_tol=getattr(args, "expansion_tol", None),
            hessian_cap=getattr(args, "hessian_cap", None),
            compare=getattr(args, "compare", None),
        )
    except ValueError as exc:
        raise _Fail(EXIT_USAGE, str(exc)) from None
    # the network and layout files must parse before any solver starts
    _load_model(cfg.network, cfg.measurements)
    try:
        return Experiment.prepare(cfg)
    except MeasurementError as exc:
        raise _Fail(EXIT_USAGE, f"invalid experiment: {exc}") from None
    except ApseError as exc:
        raise _Fail(EXIT_SOLVE, f"profile synthesis failed: {exc}") from None


def cmd_synthesize(args) -> int:
    exp = _experiment(args)
    labels = exp.mset.row_labels(exp.feeder.bus_ids)
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_profiles(out, exp.stream.profiles, labels)
        if args.truth:
            with open(Path(args.truth), "w", newline="") as fh:
                w = csv.writer(fh)
                ids = [exp.feeder.bus_ids[k] for k in exp.feeder.model.nonslack]
                w.writerow(["profile_id"] + [f"V:{b}" for b in ids] + [f"theta:{b}" for b in ids])
                for prof, x in zip(exp.stream.profiles, exp.stream.truths):
                    w.writerow([prof.profile_id, *(repr(float(v)) for v in x.vector)])
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write output: {exc}") from None
    print(f"wrote {len(exp.stream.profiles)} profiles ({exp.stream.redraws} infeasible draws replaced)")
    return EXIT_OK


def cmd_batch(args) -> int:
    exp = _experiment(args)
    cfg = exp.config
    stream = exp.stream
    workers = args.threads if args.threads else 1
    try:
        stats = run_batch(
            stream.profiles, exp.physics, exp.covariance, cfg.apse_config(), cfg.compare,
            stream.bootstrap, cfg.bins, [exp.feeder.bus_ids[k] for k in exp.feeder.model.nonslack], workers,
        )
    except ObservabilityError as exc:
        raise _Fail(EXIT_SOLVE, str(exc)) from None
    out = Path(args.out)
    try:
        summary = summarize(stats, out)
        if args.save_basis and "apse_result" in stats.extras:
            save_basis(args.save_basis, stats.extras["apse_result"].subspace)
        if APSE in stats.runs:
            stats.extras["apse_result"].write_csv(out / "timing" / "apse_profiles.csv")
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write output: {exc}") from None
    n = stats.sample_count
    worst = min(summary["solved"].values()) if summary["solved"] else n
    line = f"{n} profiles; solved " + ", ".join(f"{k} {v}" for k, v in summary["solved"].items())
    if summary.get("speedup") is not None:
        line += f"; speedup {summary['speedup']:.2f}x"
    if "apse" in summary:
        line += f"; fallbacks {summary['apse']['fallbacks']}; basis {summary['apse']['final_basis_size']}"
    print(line)
    return EXIT_OK if worst >= SOLVED_FRACTION * n else EXIT_SOLVE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="apse", description="Accelerated probabilistic state estimation.")
    sub = ap.add_subparsers(dest="command", required=True)

    def model_flags(p):
        p.add_argument("--network", required=True, help="network JSON file")
        p.add_argument("--measurements", required=True, help="measurement layout JSON file")

    p = sub.add_parser("validate", help="check files, redundancy and observability")
    model_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("estimate", help="one GNvQR solve of one profile")
    model_flags(p)
    p.add_argument("--profiles", required=True, help="profiles CSV")
    p.add_argument("--profile-id", type=int, help="profile to solve (default: first row)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--eps-n", type=float, help="step tolerance")
    p.set_defaults(func=cmd_estimate)

    def experiment_flags(p):
        p.add_argument("--experiment", required=True, help="experiment JSON file")
        p.add_argument("--seed", type=int, help="sample seed (noise seed becomes seed + 1)")
        p.add_argument("--samples", type=int, help="override the sample count M")

    p = sub.add_parser("synthesize", help="write the experiment's synthetic profiles to CSV")
    experiment_flags(p)
    p.add_argument("--out", required=True, help="profiles CSV to write")
    p.add_argument("--truth", help="optional CSV for the power-flow truth states")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("batch", help="Monte-Carlo run with APSE and/or GNvQR")
    experiment_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--eps-n", type=float, help="step and accept tolerance")
    p.add_argument("--expansion-tol", type=float, help="relative basis expansion threshold")
    p.add_argument("--hessian-cap", type=int, help="profiles after which the Hessian stops expanding")
    p.add_argument("--compare", choices=[c for c in COMPARISONS if c != "gnvqr-only"], help="solver paths to run")
    p.add_argument("--threads", type=int, default=1,
                   help=f"workers for gnvqr-only runs (machine has {os.cpu_count()})")
    p.add_argument("--save-basis", help="write the final basis as .npy")
    p.set_defaults(func=cmd_batch)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
