"""Command-line orchestration: validation, simulation, estimation, and the
annealed/quenched verification experiments.

Every command is deterministic given (config, seed): replica seeds are
derived as hash(master seed, purpose label, replica index), outputs are
written in replica order, and statistics use fixed-order reductions, so the
artifact files are byte-identical across reruns and thread counts.

Exit codes: 0 success, 1 domain/data failure, 2 usage/parse error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .clt import (Functional, annealed_ensemble, calibrate, delta_m,
                  functional_checks, ks_statistic, quenched_variance_curve)
from .engine import run_ensemble
from .estimators import block_iid_diagnostics, sigma_hat, velocity_hat
from .model import (DomainError, InfeasibleConstantsError, ModelSpec,
                    ModelValidationError, find_constants, gamma_exponent,
                    quenched_condition, validate_assumptions)
from .randomness import derive_seed, derive_seeds
from .regeneration import InsufficientDataError
from .reporting import (blocks_csv_rows, write_csv, write_json, write_manifest)
from .walk import run_walk

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


@dataclass
class RunConfig:
    """Validated command configuration (counts >= 1, b in (1, 2], out writable)."""

    model_path: Path | None
    seed: int
    out_dir: Path | None
    threads: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.threads < 1:
            raise DomainError(f"thread count must be >= 1, got {self.threads}")
        for key, value in self.params.items():
            if key.endswith(("replicas", "steps", "pairs", "n")) and value is not None:
                if int(value) < 1:
                    raise DomainError(f"{key} must be >= 1, got {value}")
        b = self.params.get("b")
        if b is not None and not (1.0 < b <= 2.0):
            raise DomainError(f"b must lie in (1, 2], got {b}")
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            probe = self.out_dir / ".write_probe"
            probe.write_text("")
            probe.unlink()


def _load_model(path: Path) -> ModelSpec:
    return ModelSpec.from_json(Path(path).read_text(encoding="utf-8"))


def _error_json(exc: Exception) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc)})


def _axis_directions(d: int) -> list[tuple[str, np.ndarray]]:
    out = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        out.append((f"+e{i + 1}", e.copy()))
        out.append((f"-e{i + 1}", -e))
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        spec = _load_model(args.model)
    except json.JSONDecodeError as exc:
        print(_error_json(ModelValidationError(
            f"malformed model JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")),
            file=sys.stderr)
        return EXIT_USAGE
    except ModelValidationError as exc:
        print(_error_json(exc), file=sys.stderr)
        return EXIT_USAGE
    report = validate_assumptions(spec)
    text = report.to_json()
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "validation.json").write_text(text + "\n", encoding="utf-8")
    return EXIT_OK if report.passed else EXIT_FAILURE


def _gated_model(args) -> ModelSpec:
    spec = _load_model(args.model)
    report = validate_assumptions(spec)
    if not report.passed:
        failed = [c.id for c in report.checks if not c.passed]
        raise DomainError(f"model fails assumptions {failed}; run validate for details")
    return spec


def cmd_simulate(args) -> int:
    started = time.time()
    cfg = RunConfig(Path(args.model), args.seed, Path(args.out), args.threads,
                    {"steps": args.steps, "replicas": args.replicas,
                     "mode": args.mode, "thin": args.thin})
    spec = _gated_model(args)
    if args.mode == "quenched_shared":
        # one environment realization, replicas distinguished by walk id
        shared = derive_seed(args.seed, "simulate-env")
        seeds = np.full(args.replicas, shared, dtype=np.uint64)
    else:
        seeds = derive_seeds(args.seed, "simulate", args.replicas)

    def one(i: int):
        return run_walk(spec, int(seeds[i]), i, args.steps, mode=args.mode)

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        runs = list(pool.map(one, range(args.replicas)))

    blocks_rows = []
    tau_rows = []
    for i, run in enumerate(runs):
        (cfg.out_dir / f"trajectory_{i:04d}.jsonl").write_text(
            run.trajectory_log().to_jsonl(thin=args.thin), encoding="utf-8")
        prev_t = 0
        prev_x = run.positions[0]
        for j, tau in enumerate(run.taus):
            dx = run.positions[tau] - prev_x
            blocks_rows.append((i, j, tau - prev_t, *[int(c) for c in dx]))
            prev_t, prev_x = tau, run.positions[tau]
        if run.taus:
            tau_rows.append((i, run.taus[0]))
    d = spec.d
    write_csv(cfg.out_dir / "blocks.csv",
              ["replica", "block_index", "dtau"] + [f"dx_{k + 1}" for k in range(d)],
              blocks_rows)
    write_csv(cfg.out_dir / "tau_samples.csv", ["replica", "tau1"], tau_rows)
    write_manifest(cfg.out_dir, "simulate", cfg.params, args.seed,
                   Path(args.model), started)
    return EXIT_OK


def cmd_estimate(args) -> int:
    started = time.time()
    cfg = RunConfig(Path(args.model), args.seed, Path(args.out), args.threads,
                    {"steps": args.steps, "replicas": args.replicas})
    spec = _gated_model(args)
    seeds = derive_seeds(args.seed, "estimate", args.replicas)
    res = run_ensemble(spec, seeds, seeds,
                       np.zeros(args.replicas, dtype=np.uint64),
                       args.steps, record_blocks=True)
    if res.block_dtau.size < 2:
        raise InsufficientDataError(
            f"insufficient regenerations: {res.block_dtau.size} blocks from "
            f"{args.replicas} x {args.steps} steps")
    d = spec.d
    write_csv(cfg.out_dir / "blocks.csv",
              ["replica", "block_index", "dtau"] + [f"dx_{k + 1}" for k in range(d)],
              blocks_csv_rows(res.block_replica, res.block_dtau, res.block_dx))
    tau1 = res.tau1()
    write_csv(cfg.out_dir / "tau_samples.csv", ["replica", "tau1"],
              [(i, int(t)) for i, t in enumerate(tau1)])
    drift = velocity_hat((res.block_dtau, res.block_dx))
    cov = sigma_hat((res.block_dtau, res.block_dx), drift.v_hat)
    doc = {"v_hat": drift.v_hat.tolist(), "se": drift.se.tolist(),
           "sigma_hat": cov.sigma_hat.tolist(), "n_blocks": drift.n_blocks,
           "cholesky_ok": cov.cholesky_ok}
    try:
        doc["diagnostics"] = block_iid_diagnostics(
            (res.block_dtau, res.block_dx)).to_dict()
    except InsufficientDataError as exc:
        doc["diagnostics"] = {"skipped": str(exc)}
    write_json(cfg.out_dir / "estimates.json", doc)
    write_manifest(cfg.out_dir, "estimate", cfg.params, args.seed,
                   Path(args.model), started)
    return EXIT_OK


def cmd_annealed(args) -> int:
    started = time.time()
    cfg = RunConfig(Path(args.model), args.seed, Path(args.out), args.threads,
                    {"n": args.n, "replicas": args.replicas,
                     "calib_steps": args.calib_steps,
                     "calib_replicas": args.calib_replicas})
    spec = _gated_model(args)
    drift, cov = calibrate(spec, derive_seed(args.seed, "calibration"),
                           n_steps=args.calib_steps, replicas=args.calib_replicas)
    directions = _axis_directions(spec.d)
    samples = annealed_ensemble(spec, args.seed, args.n, args.replicas,
                                directions, drift.v_hat, cov.sigma_hat)
    rows = []
    diag = {"calibration": {"v_hat": drift.v_hat.tolist(),
                            "sigma_hat": cov.sigma_hat.tolist(),
                            "n_blocks": drift.n_blocks},
            "directions": {}}
    for label, vals in samples.items():
        for i, val in enumerate(vals):
            rows.append((label, i, float(val)))
        d_stat, p = ks_statistic(vals)
        diag["directions"][label] = {"ks_d": d_stat, "ks_p": p}
    fc = functional_checks(spec, derive_seed(args.seed, "functional"), args.n,
                           min(args.replicas, 2000), (0.25, 0.5, 1.0),
                           directions[0][1], drift.v_hat)
    diag["functional_checks"] = fc.to_dict()
    write_csv(cfg.out_dir / "clt_samples.csv", ["direction", "replica", "value"],
              rows)
    write_json(cfg.out_dir / "diagnostics.json", diag)
    write_manifest(cfg.out_dir, "annealed", cfg.params, args.seed,
                   Path(args.model), started)
    return EXIT_OK


def cmd_quenched(args) -> int:
    started = time.time()
    cfg = RunConfig(Path(args.model), args.seed, Path(args.out), args.threads,
                    {"b": args.b, "m_min": args.m_min, "m_max": args.m_max,
                     "env_replicas": args.env_replicas,
                     "walk_replicas": args.walk_replicas, "pairs": args.pairs,
                     "functional": args.functional})
    spec = _gated_model(args)
    drift, _ = calibrate(spec, derive_seed(args.seed, "calibration"),
                         n_steps=args.calib_steps, replicas=args.calib_replicas)
    a = np.zeros(spec.d)
    a[0] = 1.0
    if args.functional == "clipped_supnorm":
        functional = Functional("clipped_supnorm", clip=args.clip)
    else:
        functional = Functional("clipped_projection", tuple(a), clip=args.clip)
    ms = range(args.m_min, args.m_max + 1)
    curve = quenched_variance_curve(spec, args.seed, args.b, ms,
                                    args.env_replicas, args.walk_replicas,
                                    functional, drift.v_hat)
    write_csv(cfg.out_dir / "variance_curve.csv",
              ["m", "n", "var_raw", "var_corrected", "se"],
              [(r.m, r.n, r.var_raw, r.var_corrected, r.se) for r in curve])
    deltas = [delta_m(spec, args.seed, args.b, m, args.pairs, functional,
                      drift.v_hat) for m in ms]
    write_csv(cfg.out_dir / "delta_m.csv", ["m", "n", "delta", "se"],
              [(r.m, r.n, r.delta, r.se) for r in deltas])
    controls = [delta_m(spec, derive_seed(args.seed, "control"), args.b, m,
                        args.pairs, functional, drift.v_hat, control=True)
                for m in ms]
    write_json(cfg.out_dir / "diagnostics.json", {
        "calibration_v": drift.v_hat.tolist(),
        "functional": {"kind": functional.kind, "clip": functional.clip,
                       "direction": functional.direction},
        "delta_controls": [c.to_dict() for c in controls],
    })
    write_manifest(cfg.out_dir, "quenched", cfg.params, args.seed,
                   Path(args.model), started)
    return EXIT_OK


def cmd_check_conditions(args) -> int:
    if args.model:
        spec = _load_model(args.model)
        d, kappa, epsilon = spec.d, spec.kappa, spec.epsilon
    else:
        if args.d is None or args.kappa is None or args.epsilon is None:
            raise DomainError("check-conditions needs --model or all of --d/--kappa/--epsilon")
        d, kappa, epsilon = args.d, args.kappa, args.epsilon
    ok, detail = quenched_condition(d, kappa, epsilon)
    doc = detail.to_dict()
    doc["kappa"], doc["epsilon"] = kappa, epsilon
    print(json.dumps(doc, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "conditions.json", doc)
    return EXIT_OK


def cmd_find_constants(args) -> int:
    constants = find_constants(args.d, args.gamma)
    doc = constants.to_dict()
    doc["d"] = args.d
    print(json.dumps(doc, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "constants.json", doc)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dynenvwalk",
        description="Random walks in dynamical random environments: "
                    "simulation and statistical verification.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model_required=True):
        sp.add_argument("--model", required=model_required, help="model JSON file")
        sp.add_argument("--seed", type=int, default=0, help="master seed (u64)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("validate", help="check model assumptions")
    sp.add_argument("--model", required=True)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_validate)

    sp = sub.add_parser("simulate", help="run walks, write trajectories and blocks")
    common(sp)
    sp.add_argument("--steps", type=int, default=1000)
    sp.add_argument("--replicas", type=int, default=4)
    sp.add_argument("--mode", choices=("annealed_lazy", "quenched_shared"),
                    default="annealed_lazy")
    sp.add_argument("--thin", type=int, default=1, help="trajectory thinning stride")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("estimate", help="renewal estimates of velocity and covariance")
    common(sp)
    sp.add_argument("--steps", type=int, default=4096)
    sp.add_argument("--replicas", type=int, default=64)
    sp.set_defaults(fn=cmd_estimate)

    sp = sub.add_parser("annealed", help="scaling-limit ensemble and KS diagnostics")
    common(sp)
    sp.add_argument("--n", type=int, default=4096)
    sp.add_argument("--replicas", type=int, default=2000)
    sp.add_argument("--calib-steps", type=int, default=8192)
    sp.add_argument("--calib-replicas", type=int, default=512)
    sp.set_defaults(fn=cmd_annealed)

    sp = sub.add_parser("quenched", help="variance-decay curve and pair covariance gaps")
    common(sp)
    sp.add_argument("--b", type=float, default=2.0)
    sp.add_argument("--m-min", type=int, default=4)
    sp.add_argument("--m-max", type=int, default=10)
    sp.add_argument("--env-replicas", type=int, default=100)
    sp.add_argument("--walk-replicas", type=int, default=100)
    sp.add_argument("--pairs", type=int, default=1000)
    sp.add_argument("--functional", choices=("clipped_projection", "clipped_supnorm"),
                    default="clipped_projection")
    sp.add_argument("--clip", type=float, default=3.0)
    sp.add_argument("--calib-steps", type=int, default=4096)
    sp.add_argument("--calib-replicas", type=int, default=256)
    sp.set_defaults(fn=cmd_quenched)

    sp = sub.add_parser("check-conditions", help="tail exponent and dimension gate")
    sp.add_argument("--model")
    sp.add_argument("--d", type=int)
    sp.add_argument("--kappa", type=float)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_check_conditions)

    sp = sub.add_parser("find-constants", help="feasible exponents for the quenched scheme")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--gamma", type=float, required=True)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_find_constants)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except json.JSONDecodeError as exc:
        print(_error_json(ModelValidationError(
            f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")),
            file=sys.stderr)
        return EXIT_USAGE
    except ModelValidationError as exc:
        print(_error_json(exc), file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, InsufficientDataError, InfeasibleConstantsError,
            FileNotFoundError) as exc:
        print(_error_json(exc), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
