"""Command-line front end for batch experiments.

Configuration is layered: package defaults, then an optional JSON config
file, then command-line flags, with later layers winning.  Every run writes
its full effective configuration into report.json so any artifact directory
is a complete reproduction recipe.  Artifacts are deterministic: reruns with
the same configuration are byte-identical, which makes them diffable.

Exit codes: 0 when the requested computation certified (or has no
certification notion), 2 when a greedy run stopped without reaching its
tolerance or a numerical abort occurred, 1 on configuration errors.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from .analysis import (SolutionEnsemble, diagram_csv, ensemble_diagram,
                       error_sweep, error_vs_n, error_vs_n_csv, errors_csv,
                       solution_ensemble, write_csv)
from .estimators import EstimatorKind
from .greedy import (AdaptiveConfig, GreedyConfig, GreedyStatus,
                     adaptive_greedy, deflated_greedy, vanilla_greedy)
from .model import ParameterSpace, make_model
from .nlsolve import NewtonConfig
from .pod import pod_basis
from .rom import BasisMatrix

__all__ = ["RunConfig", "main"]

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_UNCERTIFIED = 2

# Environment override for the artifact directory, nothing else.
OUT_DIR_ENV = "BIFRB_OUT_DIR"

_STRATEGIES = ("vanilla", "adaptive", "deflated", "pod")
_MODELS = ("bratu", "chafee")
_ESTIMATORS = tuple(k.value for k in EstimatorKind)

ESTIMATOR_FIELDS = ["mu", "branch", "delta", "beta", "tau", "valid"]


@dataclass
class RunConfig:
    """Effective settings of one experiment; serializes losslessly to JSON."""

    model_kind: str = "chafee"
    mesh_size: int = 201
    mu_min: float | None = None  # None: take the model's default interval
    mu_max: float | None = None
    train_size: int = 51
    test_size: int = 151
    strategy: str = "deflated"
    n_max: int = 35
    tol: float = 1e-3
    estimator_kind: str = "auto_switch"
    n_ref: int = 4
    bif_tol: float = 1e-2
    r: float = 2.0
    sigma: float = 1.0
    newton_tol: float = 1e-10
    seed: int = 0
    out_dir: str = "out"

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclass_fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclass_fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config field {unknown[0]!r}")
        return cls(**data)

    def validate(self) -> list[str]:
        problems = []
        if self.model_kind not in _MODELS:
            problems.append(f"model_kind must be one of {_MODELS} (got {self.model_kind!r})")
        if self.mesh_size < 3:
            problems.append(f"mesh_size must be >= 3 (got {self.mesh_size})")
        if self.train_size < 2:
            problems.append(f"train_size must be >= 2 (got {self.train_size})")
        if self.test_size < 2:
            problems.append(f"test_size must be >= 2 (got {self.test_size})")
        if self.strategy not in _STRATEGIES:
            problems.append(f"strategy must be one of {_STRATEGIES} (got {self.strategy!r})")
        if self.n_max < 1:
            problems.append(f"n_max must be >= 1 (got {self.n_max})")
        if not self.tol > 0.0:
            problems.append(f"tol must be positive (got {self.tol})")
        if self.estimator_kind not in _ESTIMATORS:
            problems.append(f"estimator_kind must be one of {_ESTIMATORS} (got {self.estimator_kind!r})")
        if self.n_ref < 1:
            problems.append(f"n_ref must be >= 1 (got {self.n_ref})")
        if not self.bif_tol > 0.0:
            problems.append(f"bif_tol must be positive (got {self.bif_tol})")
        if not self.r > 0.0:
            problems.append(f"r must be positive (got {self.r})")
        if self.sigma < 0.0:
            problems.append(f"sigma must be nonnegative (got {self.sigma})")
        if not self.newton_tol > 0.0:
            problems.append(f"newton_tol must be positive (got {self.newton_tol})")
        if (self.mu_min is None) != (self.mu_max is None):
            problems.append("mu_min and mu_max must be given together")
        elif self.mu_min is not None and not self.mu_min < self.mu_max:
            problems.append(f"mu_min must be less than mu_max (got [{self.mu_min}, {self.mu_max}])")
        return problems

    def interval(self, model) -> tuple[float, float]:
        if self.mu_min is None:
            return model.default_interval()
        return (self.mu_min, self.mu_max)


def _greedy_config(cfg: RunConfig) -> GreedyConfig:
    return GreedyConfig(
        n_max=cfg.n_max, tol=cfg.tol,
        estimator_kind=EstimatorKind(cfg.estimator_kind),
        newton=NewtonConfig(tol=cfg.newton_tol),
        power_r=cfg.r, shift_sigma=cfg.sigma,
    )


def _build_basis(cfg: RunConfig, model, space: ParameterSpace,
                 train_oracle: SolutionEnsemble | None = None,
                 pod_modes: int | None = None):
    """(basis, report dict, per-iteration estimator tables) for one strategy."""
    gcfg = _greedy_config(cfg)
    if cfg.strategy == "vanilla":
        basis, report = vanilla_greedy(model, space, gcfg)
    elif cfg.strategy == "adaptive":
        acfg = AdaptiveConfig(n_ref=cfg.n_ref, bif_tol=cfg.bif_tol)
        basis, report = adaptive_greedy(model, space, gcfg, acfg)
    elif cfg.strategy == "deflated":
        basis, report = deflated_greedy(model, space, gcfg)
    else:
        if train_oracle is None:
            train_oracle = solution_ensemble(model, space.train_points,
                                             NewtonConfig(tol=cfg.newton_tol))
        snapshots = [p.u for p in train_oracle.points]
        result = pod_basis(model, snapshots, n_modes=pod_modes or cfg.n_max)
        payload = {
            "strategy": "pod",
            "status": "tolerance_met",  # no greedy stopping notion
            "n_snapshots": len(snapshots),
            "rank_deficient": result.rank_deficient,
            "singular_values": [float(s) for s in result.singular_values],
        }
        return result.basis, payload, []
    return basis, report.to_dict(), report.sweeps


def _summarize(sweep) -> dict:
    return {
        "max_unflagged_error": sweep.max_reduced(),
        "avg_unflagged_error": sweep.avg_reduced(),
        "n_rows": len(sweep.rows),
        "n_flagged": len(sweep.flagged()),
    }


def _write_report(out_dir: str, payload: dict) -> None:
    path = os.path.join(out_dir, "report.json")
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _exit_from_status(status: str) -> int:
    return EXIT_OK if status == GreedyStatus.TOLERANCE_MET.value else EXIT_UNCERTIFIED


def cmd_run(cfg: RunConfig) -> int:
    model = make_model(cfg.model_kind, cfg.mesh_size)
    lo, hi = cfg.interval(model)
    space = ParameterSpace.equispaced(lo, hi, cfg.train_size)
    os.makedirs(cfg.out_dir, exist_ok=True)
    try:
        basis, report, sweeps = _build_basis(cfg, model, space)
    except (RuntimeError, ValueError) as exc:
        _write_report(cfg.out_dir, {"config": cfg.to_dict(), "failure": str(exc)})
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_UNCERTIFIED

    basis.save(os.path.join(cfg.out_dir, "basis.csv"),
               os.path.join(cfg.out_dir, "basis.json"))
    for k, rows in enumerate(sweeps):
        write_csv(os.path.join(cfg.out_dir, f"estimators_iter_{k}.csv"),
                  ESTIMATOR_FIELDS, rows)

    ncfg = NewtonConfig(tol=cfg.newton_tol)
    test = ParameterSpace.equispaced(lo, hi, cfg.test_size).train_points
    oracle = solution_ensemble(model, test, ncfg)
    diagram_csv(os.path.join(cfg.out_dir, "diagram.csv"), ensemble_diagram(oracle))
    # Single-branch strategies are scored with the single-seed protocol;
    # multi-branch spaces get the deflated reduced sweep.
    deflate = cfg.strategy in ("deflated", "pod")
    sweep = error_sweep(model, basis, test, oracle, ncfg, deflate=deflate,
                        power_r=cfg.r, shift_sigma=cfg.sigma)
    errors_csv(os.path.join(cfg.out_dir, "errors.csv"), sweep)

    status = report.get("status", "tolerance_met")
    _write_report(cfg.out_dir, {
        "config": cfg.to_dict(),
        "report": report,
        "n_basis": basis.n,
        "deflated_test_sweep": deflate,
        "errors": _summarize(sweep),
    })
    print(f"{cfg.strategy}: status={status} n_basis={basis.n} "
          f"max_test_error={sweep.max_reduced():.3e} -> {cfg.out_dir}")
    return _exit_from_status(status)


def cmd_diagram(cfg: RunConfig) -> int:
    model = make_model(cfg.model_kind, cfg.mesh_size)
    lo, hi = cfg.interval(model)
    test = ParameterSpace.equispaced(lo, hi, cfg.test_size).train_points
    oracle = solution_ensemble(model, test, NewtonConfig(tol=cfg.newton_tol))
    os.makedirs(cfg.out_dir, exist_ok=True)
    diagram_csv(os.path.join(cfg.out_dir, "diagram.csv"), ensemble_diagram(oracle))
    _write_report(cfg.out_dir, {
        "config": cfg.to_dict(),
        "branches": oracle.branches(),
        "n_points": len(oracle),
    })
    print(f"diagram: {len(oracle)} labeled points, branches {oracle.branches()} "
          f"-> {cfg.out_dir}")
    return EXIT_OK


def cmd_error_sweep(cfg: RunConfig, basis_dir: str) -> int:
    try:
        basis = BasisMatrix.load(os.path.join(basis_dir, "basis.csv"),
                                 os.path.join(basis_dir, "basis.json"))
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot load basis from {basis_dir}: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    model = basis.model
    lo, hi = cfg.interval(model)
    ncfg = NewtonConfig(tol=cfg.newton_tol)
    test = ParameterSpace.equispaced(lo, hi, cfg.test_size).train_points
    oracle = solution_ensemble(model, test, ncfg)
    deflate = cfg.strategy in ("deflated", "pod")
    sweep = error_sweep(model, basis, test, oracle, ncfg, deflate=deflate,
                        power_r=cfg.r, shift_sigma=cfg.sigma)
    os.makedirs(cfg.out_dir, exist_ok=True)
    errors_csv(os.path.join(cfg.out_dir, "errors.csv"), sweep)
    _write_report(cfg.out_dir, {
        "config": cfg.to_dict(),
        "basis_dir": basis_dir,
        "n_basis": basis.n,
        "deflated_test_sweep": deflate,
        "errors": _summarize(sweep),
    })
    print(f"error-sweep: n_basis={basis.n} max_unflagged={sweep.max_reduced():.3e} "
          f"flagged={len(sweep.flagged())} -> {cfg.out_dir}")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, strategies: list[str], n_modes: int | None,
                matched_n: bool) -> int:
    if len(strategies) < 2:
        print("compare requires at least 2 strategies", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    unknown = [s for s in strategies if s not in _STRATEGIES]
    if unknown:
        print(f"unknown strategy {unknown[0]!r}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    if "pod" in strategies and n_modes is None and not matched_n:
        print("compare with pod requires --n-modes or --matched-n", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    if matched_n and "deflated" not in strategies:
        print("--matched-n needs the deflated strategy in the comparison",
              file=sys.stderr)
        return EXIT_CONFIG_ERROR

    model = make_model(cfg.model_kind, cfg.mesh_size)
    lo, hi = cfg.interval(model)
    space = ParameterSpace.equispaced(lo, hi, cfg.train_size)
    ncfg = NewtonConfig(tol=cfg.newton_tol)
    test = ParameterSpace.equispaced(lo, hi, cfg.test_size).train_points
    oracle = solution_ensemble(model, test, ncfg)

    # The deflated run goes first so its final size can cap the pod modes.
    ordered = sorted(set(strategies), key=lambda s: (s != "deflated", s))
    table: list[dict] = []
    summary: list[dict] = []
    matched = None
    try:
        for strategy in ordered:
            sub = RunConfig(**{**cfg.to_dict(), "strategy": strategy})
            modes = n_modes if n_modes is not None else matched
            basis, report, _ = _build_basis(sub, model, space,
                                            train_oracle=None, pod_modes=modes)
            if strategy == "deflated":
                matched = basis.n
            deflate = strategy in ("deflated", "pod")
            rows = error_vs_n(model, basis.truncated,
                              list(range(1, basis.n + 1)), test, oracle, ncfg,
                              deflate=deflate)
            for row in rows:
                table.append({"strategy": strategy, **row})
            final = rows[-1] if rows else {"n": 0, "max_error": math.inf,
                                           "avg_error": math.inf, "n_flagged": 0}
            summary.append({"strategy": strategy, "status": report.get("status", ""),
                            **final})
    except (RuntimeError, ValueError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_UNCERTIFIED

    os.makedirs(cfg.out_dir, exist_ok=True)
    error_vs_n_csv_path = os.path.join(cfg.out_dir, "error_vs_n.csv")
    write_csv(error_vs_n_csv_path,
              ["strategy", "n", "max_error", "avg_error", "n_flagged"], table)
    _write_report(cfg.out_dir, {
        "config": cfg.to_dict(),
        "strategies": ordered,
        "summary": summary,
    })
    print(f"{'strategy':>10} {'N':>4} {'max_error':>12} {'avg_error':>12} "
          f"{'certified':>10}")
    for row in summary:
        certified = "yes" if row["max_error"] <= cfg.tol else "no"
        print(f"{row['strategy']:>10} {row['n']:>4} {row['max_error']:>12.3e} "
              f"{row['avg_error']:>12.3e} {certified:>10}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--model", dest="model_kind", choices=_MODELS)
    p.add_argument("--mesh", dest="mesh_size", type=int)
    p.add_argument("--mu-min", dest="mu_min", type=float)
    p.add_argument("--mu-max", dest="mu_max", type=float)
    p.add_argument("--train", dest="train_size", type=int,
                   help="training grid size (initial grid for adaptive)")
    p.add_argument("--test", dest="test_size", type=int)
    p.add_argument("--strategy", choices=_STRATEGIES)
    p.add_argument("--nmax", dest="n_max", type=int,
                   help="max basis size (mode count for pod runs)")
    p.add_argument("--tol", type=float)
    p.add_argument("--estimator", dest="estimator_kind", choices=_ESTIMATORS)
    p.add_argument("--n-ref", dest="n_ref", type=int)
    p.add_argument("--bif-tol", dest="bif_tol", type=float)
    p.add_argument("--r", type=float, help="deflation power")
    p.add_argument("--sigma", type=float, help="deflation shift")
    p.add_argument("--newton-tol", dest="newton_tol", type=float)
    p.add_argument("--seed", type=int,
                   help="recorded in the manifest; seeds any randomized utility")
    p.add_argument("--out", dest="out_dir")


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        with open(args.config) as f:
            cfg = RunConfig.from_dict(json.load(f))
    for f in dataclass_fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    if OUT_DIR_ENV in os.environ:
        cfg.out_dir = os.environ[OUT_DIR_ENV]
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bifrb",
        description="Certified reduced bases for 1D bifurcating PDE models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="build a basis and score it on a test grid")
    _add_config_flags(p_run)

    p_cmp = sub.add_parser("compare", help="error-vs-N table across strategies")
    _add_config_flags(p_cmp)
    p_cmp.add_argument("--strategies", required=True,
                       help="comma-separated list, e.g. vanilla,deflated")
    p_cmp.add_argument("--n-modes", dest="n_modes", type=int,
                       help="pod mode count")
    p_cmp.add_argument("--matched-n", dest="matched_n", action="store_true",
                       help="give pod the deflated run's final basis size")

    p_diag = sub.add_parser("diagram", help="labeled bifurcation diagram CSV")
    _add_config_flags(p_diag)

    p_err = sub.add_parser("error-sweep", help="score a saved basis on a test grid")
    _add_config_flags(p_err)
    p_err.add_argument("--basis-dir", required=True,
                       help="directory holding basis.csv and basis.json")

    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
    except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    problems = cfg.validate()
    if problems:
        for problem in problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    if args.command == "run":
        return cmd_run(cfg)
    if args.command == "compare":
        strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
        return cmd_compare(cfg, strategies, args.n_modes, args.matched_n)
    if args.command == "diagram":
        return cmd_diagram(cfg)
    return cmd_error_sweep(cfg, args.basis_dir)


if __name__ == "__main__":
    sys.exit(main())
