"""Greedy sampling strategies for building certified reduced bases.

Three variants share one skeleton: sweep the training set with an error
estimator, pick the worst-certified entry, compute a full-order snapshot
there, and enrich the basis.

* The plain variant runs one reduced solve per parameter and tracks a single
  solution family.
* The adaptive variant additionally locates the parameter minimizing the
  inf-sup constant after every enrichment and refines the training grid
  around it, so a coarse initial grid sharpens itself near the critical
  point.  The first refinement is unconditional; afterwards refinement fires
  only while the minimizer keeps moving by more than the similarity
  tolerance, since consecutive minimizers on an unchanged grid coincide and
  would otherwise block the procedure from ever engaging.
* The deflated variant sweeps all reduced branches deflation can reach,
  selects the worst (parameter, branch) pair, seeds the full-order solve
  with the lifted reduced solution of that branch, and afterwards harvests
  every additional root at the selected parameter into the basis.

Iterations that add no column (the snapshot already lies in the span) fall
through to the next-ranked entry; exhausting all candidates above tolerance
aborts with a stagnation status.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .estimators import (EstimatorConfig, EstimatorKind, EstimatorSet,
                         argmin_beta, beta_sweep, deflated_estimator_sweep,
                         estimator_sweep)
from .model import ParameterSpace, ParametricModel
from .nlsolve import NewtonConfig, RootSet, deflated_newton, newton
from .rom import BasisMatrix, GuessStore

__all__ = [
    "GreedyStatus",
    "GreedyConfig",
    "AdaptiveConfig",
    "IterationRecord",
    "GreedyReport",
    "vanilla_greedy",
    "refinement",
    "adaptive_greedy",
    "deflated_snapshots",
    "deflated_greedy",
]


class GreedyStatus(str, Enum):
    TOLERANCE_MET = "tolerance_met"
    N_MAX_REACHED = "n_max_reached"
    STAGNATION = "stagnation"


@dataclass
class GreedyConfig:
    n_max: int = 35
    tol: float = 1e-3
    mu0: float | None = None  # default: endpoint on the model's uniqueness side
    estimator_kind: EstimatorKind = EstimatorKind.AUTO_SWITCH
    continuation_hf: bool = False
    continuation_rb: bool = False
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    power_r: float = 2.0
    shift_sigma: float = 1.0

    def validate(self, space: ParameterSpace) -> None:
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.mu0 is not None and not _in_train_set(self.mu0, space):
            raise ValueError(f"mu0={self.mu0:g} is not a training parameter")

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(self.estimator_kind, self.newton,
                               self.power_r, self.shift_sigma)


@dataclass
class AdaptiveConfig:
    n_ref: int = 4  # points inserted per refinement
    bif_tol: float = 1e-2  # similarity tolerance on consecutive minimizers
    initial_train_size: int = 4

    def validate(self) -> None:
        if self.n_ref < 1:
            raise ValueError("n_ref must be at least 1")
        if self.bif_tol <= 0.0:
            raise ValueError("bif_tol must be positive")


@dataclass
class IterationRecord:
    iteration: int
    n_basis: int
    train_size: int
    max_delta: float
    kind_used: str
    mu_selected: float | None = None
    branch_selected: int | None = None
    enrich_status: str = ""
    snapshot_growth: int = 0  # columns added by the root-harvest stage
    reselections: int = 0
    mu_bif: float | None = None
    skipped: list = field(default_factory=list)  # (mu, branch, reason)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "n_basis": self.n_basis,
            "train_size": self.train_size,
            "max_delta": self.max_delta,
            "kind_used": self.kind_used,
            "mu_selected": self.mu_selected,
            "branch_selected": self.branch_selected,
            "enrich_status": self.enrich_status,
            "snapshot_growth": self.snapshot_growth,
            "reselections": self.reselections,
            "mu_bif": self.mu_bif,
            "skipped": [list(s) for s in self.skipped],
        }


@dataclass
class GreedyReport:
    strategy: str
    status: GreedyStatus
    mu0: float
    mu0_note: str | None
    records: list[IterationRecord]
    sweeps: list[list[dict]]  # per-iteration estimator rows, CSV schema
    mu_bif: float | None = None
    train_final: tuple = ()

    @property
    def n_iterations(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "status": self.status.value,
            "mu0": self.mu0,
            "mu0_note": self.mu0_note,
            "mu_bif": self.mu_bif,
            "n_iterations": self.n_iterations,
            "train_final": [float(m) for m in self.train_final],
            "records": [r.to_dict() for r in self.records],
        }


def _in_train_set(mu: float, space: ParameterSpace) -> bool:
    scale = max(1e-12, 1e-12 * (space.upper - space.lower))
    return any(abs(mu - p) <= scale for p in space.train_points)


def _initialize(model: ParametricModel, space: ParameterSpace,
                cfg: GreedyConfig) -> tuple[BasisMatrix, float, str | None, np.ndarray]:
    """First snapshot: solve at mu0 and enrich; scan outward on failure.

    The default mu0 is the training endpoint on the model's uniqueness side.
    Parameters whose solve diverges or whose snapshot is null (a model whose
    uniqueness-side solution is the zero state yields nothing enrichable) are
    skipped, moving to the next-nearest training parameter until a snapshot
    sticks.  The report notes when the scan moved off the requested start.
    """
    pts = list(space.train_points)
    if cfg.mu0 is not None:
        start = cfg.mu0
    else:
        start = pts[0] if model.uniqueness_side == "lower" else pts[-1]
    order = sorted(pts, key=lambda p: (abs(p - start), p))
    basis = BasisMatrix(model)
    rejected = 0
    for mu in order:
        result = newton(model, mu, model.default_guess, cfg.newton)
        if not result.converged:
            rejected += 1
            continue
        if basis.enrich(result.u, mu).enriched:
            note = None if rejected == 0 else (
                f"initialized at mu={mu:g} after {rejected} unusable "
                f"candidates starting from mu0={start:g}")
            return basis, mu, note, result.u
        rejected += 1
    raise RuntimeError("no training parameter produced a usable initial snapshot")


def _ranked_candidates(sweep: EstimatorSet, tol: float, sampled: list) -> list:
    """Entries above tolerance, worst first.

    Ties (infinite bounds mostly) break toward the parameter farthest from
    the already-sampled ones, then toward smaller parameter values.
    """
    known = [s for s in sampled if s is not None]

    def key(e):
        dist = min((abs(e.mu - s) for s in known), default=math.inf)
        return (-e.delta, -dist, e.mu)

    return sorted((e for e in sweep if e.delta > tol), key=key)


def _terminal_record(it, basis, train_size, sweep, status) -> IterationRecord:
    return IterationRecord(it, basis.n, train_size, sweep.max_delta,
                           sweep.kind_used.value, enrich_status=status.value)


def vanilla_greedy(model: ParametricModel, space: ParameterSpace,
                   cfg: GreedyConfig | None = None) -> tuple[BasisMatrix, GreedyReport]:
    """Single-branch greedy: worst estimator entry picks the next snapshot."""
    cfg = cfg or GreedyConfig()
    cfg.validate(space)
    basis, mu0_used, note, last_hf = _initialize(model, space, cfg)
    ecfg = cfg.estimator_config()
    records: list[IterationRecord] = []
    sweeps: list[list[dict]] = []
    it = 0
    while True:
        it += 1
        sweep = estimator_sweep(model, basis, space.train_points, ecfg,
                                continuation=cfg.continuation_rb)
        sweeps.append(sweep.rows())
        if sweep.max_delta <= cfg.tol:
            status = GreedyStatus.TOLERANCE_MET
            records.append(_terminal_record(it, basis, len(space), sweep, status))
            break
        if basis.n >= cfg.n_max:
            status = GreedyStatus.N_MAX_REACHED
            records.append(_terminal_record(it, basis, len(space), sweep, status))
            break
        skipped: list = []
        progressed = False
        for entry in _ranked_candidates(sweep, cfg.tol, basis.mu_values):
            guess = last_hf if (cfg.continuation_hf and last_hf is not None) \
                else model.default_guess
            result = newton(model, entry.mu, guess, cfg.newton)
            if not result.converged:
                skipped.append((entry.mu, entry.branch, f"hf_{result.cause}"))
                continue
            enr = basis.enrich(result.u, entry.mu)
            if not enr.enriched:
                skipped.append((entry.mu, entry.branch, f"gs_{enr.cause}"))
                continue
            last_hf = result.u
            records.append(IterationRecord(
                it, basis.n, len(space), sweep.max_delta, sweep.kind_used.value,
                entry.mu, entry.branch, "enriched", 0, len(skipped), None, skipped))
            progressed = True
            break
        if not progressed:
            status = GreedyStatus.STAGNATION
            records.append(IterationRecord(
                it, basis.n, len(space), sweep.max_delta, sweep.kind_used.value,
                enrich_status=status.value, skipped=skipped))
            break
    report = GreedyReport("vanilla", status, mu0_used, note, records, sweeps,
                          None, space.train_points)
    return basis, report


def refinement(space: ParameterSpace, mu_bif: float, mu_prev: float | None,
               n_ref: int, tol: float) -> ParameterSpace:
    """Insert n_ref equispaced points between the train-set neighbors of mu_bif.

    No-op when the minimizer moved by at most `tol` since the previous call
    (the similarity criterion); with mu_prev None the guard is vacuous.  At
    the ends of the training set only the single adjacent interval is
    refined.
    """
    if mu_prev is not None and abs(mu_bif - mu_prev) <= tol:
        return space
    pts = space.train_points
    idx = int(np.argmin([abs(p - mu_bif) for p in pts]))
    if abs(pts[idx] - mu_bif) > max(1e-12, 1e-12 * (space.upper - space.lower)):
        raise ValueError(f"mu_bif={mu_bif:g} is not a training parameter")
    lo = pts[idx - 1] if idx > 0 else pts[idx]
    hi = pts[idx + 1] if idx + 1 < len(pts) else pts[idx]
    inserted = np.linspace(lo, hi, n_ref + 2)[1:-1]
    return space.with_points(inserted)


def adaptive_greedy(model: ParametricModel, space: ParameterSpace,
                    cfg: GreedyConfig | None = None,
                    acfg: AdaptiveConfig | None = None) -> tuple[BasisMatrix, GreedyReport]:
    """Greedy with training-set refinement around the inf-sup minimizer.

    After every enrichment the inf-sup constant is swept over the current
    training set at the continuation branch's reduced solutions; its argmin
    approximates the critical parameter and steers grid refinement.  The
    final report carries the last minimizer as the detected critical point.
    """
    cfg = cfg or GreedyConfig()
    acfg = acfg or AdaptiveConfig()
    cfg.validate(space)
    acfg.validate()
    basis, mu0_used, note, last_hf = _initialize(model, space, cfg)
    ecfg = cfg.estimator_config()
    records: list[IterationRecord] = []
    sweeps: list[list[dict]] = []
    mu_bif: float | None = None
    it = 0
    while True:
        it += 1
        sweep = estimator_sweep(model, basis, space.train_points, ecfg,
                                continuation=cfg.continuation_rb)
        sweeps.append(sweep.rows())
        if sweep.max_delta <= cfg.tol:
            status = GreedyStatus.TOLERANCE_MET
            records.append(_terminal_record(it, basis, len(space), sweep, status))
            break
        if basis.n >= cfg.n_max:
            status = GreedyStatus.N_MAX_REACHED
            records.append(_terminal_record(it, basis, len(space), sweep, status))
            break
        skipped: list = []
        progressed = False
        for entry in _ranked_candidates(sweep, cfg.tol, basis.mu_values):
            guess = last_hf if (cfg.continuation_hf and last_hf is not None) \
                else model.default_guess
            result = newton(model, entry.mu, guess, cfg.newton)
            if not result.converged:
                skipped.append((entry.mu, entry.branch, f"hf_{result.cause}"))
                continue
            enr = basis.enrich(result.u, entry.mu)
            if not enr.enriched:
                skipped.append((entry.mu, entry.branch, f"gs_{enr.cause}"))
                continue
            last_hf = result.u
            progressed = True
            break
        if not progressed:
            status = GreedyStatus.STAGNATION
            records.append(IterationRecord(
                it, basis.n, len(space), sweep.max_delta, sweep.kind_used.value,
                enrich_status=status.value, skipped=skipped))
            break
        # Locate the critical point on the enriched basis, then refine.  The
        # continuation sweep keeps the profile on one solution family, whose
        # inf-sup dips at the critical parameter.
        betas = beta_sweep(model, basis, space.train_points, ecfg, continuation=True)
        new_bif = argmin_beta(betas).mu
        space = refinement(space, new_bif, mu_bif, acfg.n_ref, acfg.bif_tol)
        mu_bif = new_bif
        records.append(IterationRecord(
            it, basis.n, len(space), sweep.max_delta, sweep.kind_used.value,
            entry.mu, entry.branch, "enriched", 0, len(skipped), mu_bif, skipped))
    # The last refinement postdates the last minimizer, so detect the critical
    # point once more on the final grid before reporting it.
    betas = beta_sweep(model, basis, space.train_points, ecfg, continuation=True)
    mu_bif = argmin_beta(betas).mu
    report = GreedyReport("adaptive", status, mu0_used, note, records, sweeps,
                          mu_bif, space.train_points)
    return basis, report


def deflated_snapshots(model: ParametricModel, roots_hf: RootSet,
                       guesses: GuessStore, mu: float, cfg: NewtonConfig,
                       basis: BasisMatrix, power_r: float = 2.0,
                       shift_sigma: float = 1.0) -> tuple[BasisMatrix, GuessStore, int]:
    """Harvest every additional full-order root at mu into the basis.

    Each stored guess is driven through deflated solves against the
    accumulated roots until it diverges.  New roots always join the root set
    and the guess store, even when Gram-Schmidt rejects their snapshot
    (a root already in the span still has to repel later solves); only
    genuinely new directions grow the basis.  Returns the basis, the updated
    guess store and the new basis size.
    """
    for guess in list(guesses.hf):
        while True:
            result = deflated_newton(model, mu, guess, list(roots_hf), cfg,
                                     power_r, shift_sigma)
            if not result.converged or not roots_hf.is_distinct(result.u):
                break
            roots_hf.add(result.u)
            basis.enrich(result.u, mu)
    for root in roots_hf:
        guesses.add_hf(root)
    return basis, guesses, basis.n


def deflated_greedy(model: ParametricModel, space: ParameterSpace,
                    cfg: GreedyConfig | None = None) -> tuple[BasisMatrix, GreedyReport]:
    """Multi-branch greedy: certify every branch deflation can reach.

    Each sweep enumerates all reduced roots per parameter and estimates each
    one; the worst (parameter, branch) pair supplies the next snapshot, with
    the lifted reduced solution seeding the full-order solve so the snapshot
    lands on the poorly approximated branch.  A root harvest at the selected
    parameter then pulls in the coexisting branches.  Entries whose
    enrichment adds nothing anywhere fall through to the next-ranked entry.
    """
    cfg = cfg or GreedyConfig()
    cfg.validate(space)
    basis, mu0_used, note, first_root = _initialize(model, space, cfg)
    store = GuessStore(model)
    for g in model.default_guesses:
        store.add_hf(g)
    store.add_hf(first_root)
    ecfg = cfg.estimator_config()
    records: list[IterationRecord] = []
    sweeps: list[list[dict]] = []
    it = 0
    while True:
        it += 1
        sweep = deflated_estimator_sweep(model, basis, space.train_points,
                                         ecfg, store)
        sweeps.append(sweep.rows())
        if sweep.max_delta <= cfg.tol:
            status = GreedyStatus.TOLERANCE_MET
            records.append(_terminal_record(it, basis, len(space), sweep, status))
            break
        if basis.n >= cfg.n_max:
            status = GreedyStatus.N_MAX_REACHED
            records.append(_terminal_record(it, basis, len(space), sweep, status))
            break
        skipped: list = []
        progressed = False
        for entry in _ranked_candidates(sweep, cfg.tol, basis.mu_values):
            guess = basis.lift(entry.u_n) if entry.u_n is not None \
                else model.default_guess
            result = newton(model, entry.mu, guess, cfg.newton)
            if not result.converged:
                skipped.append((entry.mu, entry.branch, f"hf_{result.cause}"))
                continue
            n_before = basis.n
            roots = RootSet(model, entry.mu)
            roots.add(result.u)
            enr = basis.enrich(result.u, entry.mu)
            store.add_hf(result.u)
            deflated_snapshots(model, roots, store, entry.mu, cfg.newton,
                               basis, cfg.power_r, cfg.shift_sigma)
            growth = basis.n - n_before
            if growth == 0:
                skipped.append((entry.mu, entry.branch, "no_growth"))
                continue
            records.append(IterationRecord(
                it, basis.n, len(space), sweep.max_delta, sweep.kind_used.value,
                entry.mu, entry.branch, enr.status,
                growth - (1 if enr.enriched else 0), len(skipped), None, skipped))
            progressed = True
            break
        if not progressed:
            status = GreedyStatus.STAGNATION
            records.append(IterationRecord(
                it, basis.n, len(space), sweep.max_delta, sweep.kind_used.value,
                enrich_status=status.value, skipped=skipped))
            break
    report = GreedyReport("deflated", status, mu0_used, note, records, sweeps,
                          None, space.train_points)
    return basis, report
