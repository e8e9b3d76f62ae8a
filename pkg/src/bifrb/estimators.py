"""A-posteriori error estimation for reduced solutions.

Two residual-based bounds are provided.  The linear one divides the dual
residual norm by the inf-sup constant of the full-order Jacobian at the lifted
reduced solution.  The nonlinear one sharpens it with a local Lipschitz
constant K of the Jacobian: with tau = 2 K r / beta^2 (r the dual residual
norm) the error admits the certified bound

    2 r / beta / (1 + sqrt(1 - tau))        whenever tau <= 1,

which degrades gracefully to the linear bound as K -> 0 and is evaluated in
that division-free form to avoid cancellation.  tau > 1 means the residual is
too large for the quadratic model to certify anything; such entries are
reported with an infinite bound but keep their tau value for diagnostics.

The auto-switching mode runs the nonlinear bound only when it is valid on the
whole training set of the current sweep and otherwise falls back to the linear
bound for every entry, so a single sweep never mixes the two.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import solve_triangular, svdvals

from .model import ParametricModel
from .nlsolve import NewtonConfig
from .rom import BasisMatrix, GuessStore, reduced_deflated_newton, reduced_newton

__all__ = [
    "BETA_FLOOR",
    "EstimatorKind",
    "EstimatorConfig",
    "Estimate",
    "EstimatorEntry",
    "EstimatorSet",
    "BetaEntry",
    "inf_sup",
    "residual_dual_norm",
    "linear_estimate",
    "nonlinear_estimate",
    "sobolev_embedding_constant",
    "estimator_sweep",
    "deflated_estimator_sweep",
    "beta_sweep",
    "argmin_beta",
    "discover_reduced_solutions",
]

# Inf-sup values below this are treated as numerically singular in divisions.
BETA_FLOOR = 1e-12


class EstimatorKind(str, Enum):
    LINEAR = "linear"
    NONLINEAR_BRR = "nonlinear_brr"
    AUTO_SWITCH = "auto_switch"


@dataclass
class EstimatorConfig:
    kind: EstimatorKind = EstimatorKind.AUTO_SWITCH
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    power_r: float = 2.0
    shift_sigma: float = 1.0
    beta_floor: float = BETA_FLOOR


def inf_sup(model: ParametricModel, u: np.ndarray, mu: float) -> float:
    """Smallest singular value of the X-preconditioned Jacobian at state u.

    With X = L L^T this is the least singular value of L^{-1} Jac L^{-T},
    the discrete inf-sup constant of the linearized operator in the X-norm.
    """
    jac = model.jacobian(u, mu)
    half = solve_triangular(model.x_chol_lower, jac, lower=True)
    sym = solve_triangular(model.x_chol_lower, half.T, lower=True).T
    return float(svdvals(sym)[-1])


def residual_dual_norm(model: ParametricModel, u: np.ndarray, mu: float) -> float:
    return model.x_dual_norm(model.residual(u, mu))


def sobolev_embedding_constant(model: ParametricModel, p: float) -> float:
    return model.embedding_constant(p)


@dataclass
class Estimate:
    """All quantities produced for one reduced solution at one parameter."""

    delta_lin: float
    delta_brr: float  # inf when tau > 1
    beta: float
    tau: float
    lipschitz: float

    def delta_for(self, kind: EstimatorKind) -> float:
        return self.delta_lin if kind == EstimatorKind.LINEAR else self.delta_brr


def linear_estimate(model: ParametricModel, u: np.ndarray, mu: float,
                    beta_floor: float = BETA_FLOOR) -> tuple[float, float, float]:
    """(delta_lin, beta, dual residual norm) at full-order state u."""
    res = residual_dual_norm(model, u, mu)
    beta = inf_sup(model, u, mu)
    return res / max(beta, beta_floor), beta, res


def nonlinear_estimate(model: ParametricModel, u: np.ndarray, mu: float,
                       beta_floor: float = BETA_FLOOR) -> Estimate:
    """Both bounds at full-order state u.

    The Lipschitz constant is taken on a ball of radius twice the linear
    bound, which contains the exact solution whenever the nonlinear bound is
    valid at all.
    """
    delta_lin, beta, res = linear_estimate(model, u, mu, beta_floor)
    safe_beta = max(beta, beta_floor)
    lip = model.lipschitz_constant(u, mu, radius=2.0 * delta_lin) if math.isfinite(delta_lin) else math.inf
    tau = 2.0 * lip * res / safe_beta**2 if math.isfinite(lip) else math.inf
    if tau <= 1.0:
        delta_brr = 2.0 * delta_lin / (1.0 + math.sqrt(1.0 - tau))
    else:
        delta_brr = math.inf
    return Estimate(delta_lin, delta_brr, beta, tau, lip)


@dataclass
class EstimatorEntry:
    """One (parameter, branch) row of a training sweep."""

    mu: float
    branch: int
    converged: bool
    cause: str | None = None
    u_n: np.ndarray | None = None
    estimate: Estimate | None = None
    # Effective certified bound under the kind the sweep settled on.
    delta: float = math.inf
    valid: bool = False

    @property
    def beta(self) -> float:
        return self.estimate.beta if self.estimate else math.nan

    @property
    def tau(self) -> float:
        return self.estimate.tau if self.estimate else math.nan


class EstimatorSet:
    """Sweep result: entries plus the estimator kind actually applied.

    Auto-switching resolves here: the nonlinear bound is kept only if every
    converged entry of the sweep has tau <= 1, otherwise all entries fall
    back to the linear bound.
    """

    def __init__(self, entries: list[EstimatorEntry], requested_kind: EstimatorKind):
        self.entries = entries
        self.requested_kind = requested_kind
        if requested_kind == EstimatorKind.AUTO_SWITCH:
            usable = all(e.estimate is not None and e.estimate.tau <= 1.0
                         for e in entries if e.converged)
            self.kind_used = EstimatorKind.NONLINEAR_BRR if usable else EstimatorKind.LINEAR
        else:
            self.kind_used = requested_kind
        for e in entries:
            if e.converged and e.estimate is not None:
                e.delta = e.estimate.delta_for(self.kind_used)
                e.valid = math.isfinite(e.delta)
            else:
                e.delta = math.inf
                e.valid = False

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def max_delta(self) -> float:
        return max((e.delta for e in self.entries), default=0.0)

    @property
    def all_valid(self) -> bool:
        return all(e.valid for e in self.entries)

    def ranked(self) -> list[EstimatorEntry]:
        """Entries by decreasing bound; infinite bounds come first."""
        return sorted(self.entries, key=lambda e: (-e.delta, e.mu))

    def rows(self) -> list[dict]:
        return [{"mu": e.mu, "branch": e.branch, "delta": e.delta,
                 "beta": e.beta, "tau": e.tau, "valid": int(e.valid)}
                for e in self.entries]


def _entry(model, basis, mu, branch, result, cfg) -> EstimatorEntry:
    if not result.converged:
        return EstimatorEntry(mu, branch, False, result.cause)
    est = nonlinear_estimate(model, basis.lift(result.u), mu, cfg.beta_floor)
    return EstimatorEntry(mu, branch, True, None, result.u.copy(), est)


def estimator_sweep(model: ParametricModel, basis: BasisMatrix, mus,
                    cfg: EstimatorConfig | None = None,
                    continuation: bool = True) -> EstimatorSet:
    """Single-branch sweep: one reduced solve and one estimate per parameter.

    With continuation the previous parameter's solution seeds the next solve;
    the first solve, and every solve after a divergence, starts from the
    projected model default guess.
    """
    cfg = cfg or EstimatorConfig()
    entries = []
    carried = None
    for mu in mus:
        guess = carried if (continuation and carried is not None) \
            else basis.project(model.default_guess)
        result = reduced_newton(basis, mu, guess, cfg.newton)
        if not result.converged and continuation and carried is not None:
            result = reduced_newton(basis, mu, basis.project(model.default_guess), cfg.newton)
        entries.append(_entry(model, basis, mu, 0, result, cfg))
        carried = result.u.copy() if result.converged else None
    return EstimatorSet(entries, cfg.kind)


def discover_reduced_solutions(basis: BasisMatrix, mu: float, guesses,
                               cfg: NewtonConfig | None = None,
                               power_r: float = 2.0,
                               shift_sigma: float = 1.0) -> list[np.ndarray]:
    """All distinct reduced roots reachable from the guess battery.

    Mirrors the full-order discovery loop: a plain solve from the first
    guess, then repeated deflated solves from every guess until each guess
    is exhausted by divergence or duplication.
    """
    cfg = cfg or NewtonConfig()
    roots: list[np.ndarray] = []

    def is_new(y):
        ny = np.linalg.norm(y)
        return all(np.linalg.norm(y - v) > 1e-6 * max(1.0, ny, np.linalg.norm(v))
                   for v in roots)

    first = reduced_newton(basis, mu, guesses[0], cfg)
    if first.converged:
        roots.append(first.u.copy())
    for guess in guesses:
        while True:
            result = reduced_deflated_newton(basis, mu, guess, roots, cfg,
                                             power_r, shift_sigma)
            if not result.converged or not is_new(result.u):
                break
            roots.append(result.u.copy())
    return roots


def deflated_estimator_sweep(model: ParametricModel, basis: BasisMatrix, mus,
                             cfg: EstimatorConfig | None = None,
                             guess_store: GuessStore | None = None) -> EstimatorSet:
    """Multi-branch sweep: deflation discovers every reduced root per parameter.

    The guess battery at each parameter combines, in order, the roots carried
    from the previous parameter, roots this sweep's predecessor stored for the
    same parameter, and the projected model battery.  Discovered roots are
    written back to the store so the next sweep warm-starts.
    """
    cfg = cfg or EstimatorConfig()
    entries = []
    carried: list[np.ndarray] = []
    for mu in mus:
        battery = [g.copy() for g in carried]
        if guess_store is not None:
            battery.extend(guess_store.rb_for(mu, basis.n))
        battery.extend(basis.project(g) for g in model.default_guesses)
        roots = discover_reduced_solutions(basis, mu, battery, cfg.newton,
                                           cfg.power_r, cfg.shift_sigma)
        if not roots:
            probe = reduced_newton(basis, mu, battery[0], cfg.newton)
            entries.append(EstimatorEntry(mu, 0, False, probe.cause))
        else:
            for k, root in enumerate(roots):
                est = nonlinear_estimate(model, basis.lift(root), mu, cfg.beta_floor)
                entries.append(EstimatorEntry(mu, k, True, None, root.copy(), est))
        if guess_store is not None:
            guess_store.set_rb(mu, roots)
        carried = [r.copy() for r in roots]
    return EstimatorSet(entries, cfg.kind)


@dataclass
class BetaEntry:
    mu: float
    beta: float
    converged: bool


def beta_sweep(model: ParametricModel, basis: BasisMatrix, mus,
               cfg: EstimatorConfig | None = None,
               continuation: bool = True) -> list[BetaEntry]:
    """Inf-sup profile over the training set at lifted reduced solutions.

    Parameters where the reduced solve diverges get an infinite value so
    they never win the argmin used for bifurcation localization.
    """
    cfg = cfg or EstimatorConfig()
    out = []
    carried = None
    for mu in mus:
        guess = carried if (continuation and carried is not None) \
            else basis.project(model.default_guess)
        result = reduced_newton(basis, mu, guess, cfg.newton)
        if not result.converged and continuation and carried is not None:
            result = reduced_newton(basis, mu, basis.project(model.default_guess), cfg.newton)
        if result.converged:
            out.append(BetaEntry(mu, inf_sup(model, basis.lift(result.u), mu), True))
            carried = result.u.copy()
        else:
            out.append(BetaEntry(mu, math.inf, False))
            carried = None
    return out


def argmin_beta(entries: list[BetaEntry]) -> BetaEntry:
    if not entries:
        raise ValueError("empty inf-sup profile")
    return min(entries, key=lambda e: (e.beta, e.mu))
