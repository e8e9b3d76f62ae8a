"""Newton solvers with deflation for computing multiple coexisting solutions.

Deflation multiplies the residual by m(y) = prod_i (||y - u_i||^-r + sigma)
over previously found roots u_i, which makes those roots repel the iteration.
The modified Newton step never forms the rank-one-corrected Jacobian: by the
Sherman-Morrison identity the deflated step is the plain step delta_u scaled by

    theta = 1 / (1 - <grad m, delta_u> / m),

so each iteration costs one linear solve plus two inner products.  Divergence
(norm blow-up, stalled deflation factor, singular Jacobian, iteration budget)
is reported as a value on the result object, never as an exception.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ParametricModel

__all__ = [
    "NewtonConfig",
    "SolveResult",
    "DeflationOperator",
    "DeflationSingularity",
    "RootSet",
    "deflation_scalar",
    "deflation_gradient",
    "newton",
    "deflated_newton",
    "discover_solutions",
]

# Relative scale below which two states count as the same root.
DISTINCTNESS_THRESHOLD = 1e-6
# |1 - <grad m, du>/m| below this means the deflated step direction is lost.
STALL_THRESHOLD = 1e-14


@dataclass
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 100
    divergence_norm: float = 1e6
    # Consecutive residual-norm increases tolerated before declaring divergence.
    divergence_iter: int = 25


@dataclass
class SolveResult:
    """Outcome of a Newton run; `u` is the last iterate even on divergence."""

    u: np.ndarray
    converged: bool
    iterations: int
    residual_norm: float
    cause: str | None = None

    def __bool__(self) -> bool:
        return self.converged


class DeflationSingularity(RuntimeError):
    """Raised when the deflation operator is evaluated on one of its own roots."""


@dataclass
class DeflationOperator:
    """Scalar deflation factor and its gradient for a fixed list of roots.

    `metric` is the SPD matrix of the distance inner product (the model's X
    matrix for full-order states); None means the Euclidean metric, which is
    what reduced coefficient vectors use since the basis is X-orthonormal.
    """

    roots: list
    power_r: float = 2.0
    shift_sigma: float = 1.0
    metric: np.ndarray | None = None

    def __post_init__(self):
        if self.power_r < 1.0:
            raise ValueError("deflation power must satisfy r >= 1")
        if self.shift_sigma <= 0.0:
            raise ValueError("deflation shift must satisfy sigma > 0")
        self.roots = [np.asarray(u, dtype=float) for u in self.roots]

    def _diffs_and_distances(self, y: np.ndarray):
        diffs = [y - u for u in self.roots]
        if self.metric is None:
            dists = [float(np.linalg.norm(d)) for d in diffs]
        else:
            dists = []
            for d in diffs:
                q = float(d @ (self.metric @ d))
                dists.append(float(np.sqrt(max(q, 0.0))) if np.isfinite(q) else float("inf"))
        return diffs, dists

    def scalar(self, y: np.ndarray) -> float:
        _, dists = self._diffs_and_distances(np.asarray(y, dtype=float))
        if any(d < 1e-100 for d in dists):
            raise DeflationSingularity("deflation singularity: state coincides with a stored root")
        m = 1.0
        for d in dists:
            m *= d ** (-self.power_r) + self.shift_sigma
        return m

    def gradient(self, y: np.ndarray) -> np.ndarray:
        """Gradient of scalar() at y; pairs with plain dot products against steps."""
        y = np.asarray(y, dtype=float)
        diffs, dists = self._diffs_and_distances(y)
        if any(d < 1e-100 for d in dists):
            raise DeflationSingularity("deflation singularity: state coincides with a stored root")
        g = np.zeros_like(y)
        if not self.roots:
            return g
        factors = [d ** (-self.power_r) + self.shift_sigma for d in dists]
        m = float(np.prod(factors))
        for diff, d, f in zip(diffs, dists, factors):
            md = self.metric @ diff if self.metric is not None else diff
            g += (m / f) * (-self.power_r) * d ** (-self.power_r - 2.0) * md
        return g


def deflation_scalar(op: DeflationOperator, y: np.ndarray) -> float:
    return op.scalar(y)


def deflation_gradient(op: DeflationOperator, y: np.ndarray) -> np.ndarray:
    return op.gradient(y)


@dataclass
class RootSet:
    """Distinct solutions of one parameter value, with a distinctness guard.

    Two states are the same root when ||a - b||_X <= threshold * max(1, ||a||_X,
    ||b||_X); `add` silently refuses duplicates and reports whether it added.
    """

    model: ParametricModel
    mu: float
    threshold: float = DISTINCTNESS_THRESHOLD
    roots: list = field(default_factory=list)

    def is_distinct(self, u: np.ndarray) -> bool:
        nu = self.model.x_norm(u)
        for v in self.roots:
            scale = max(1.0, nu, self.model.x_norm(v))
            if self.model.x_norm(u - v) <= self.threshold * scale:
                return False
        return True

    def add(self, u: np.ndarray) -> bool:
        if not self.is_distinct(u):
            return False
        self.roots.append(np.asarray(u, dtype=float).copy())
        return True

    def __len__(self) -> int:
        return len(self.roots)

    def __iter__(self):
        return iter(self.roots)


def _newton_core(residual_fn, jacobian_fn, guess, cfg, res_norm_fn, state_norm_fn,
                 deflation: DeflationOperator | None = None,
                 distinct_fn=None) -> SolveResult:
    """Shared engine for all four solver entry points (full/reduced x plain/deflated).

    Overflow during divergence is expected and handled through the norm
    checks, so numpy warnings stay silenced for the whole iteration.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _newton_iterate(residual_fn, jacobian_fn, guess, cfg,
                               res_norm_fn, state_norm_fn, deflation, distinct_fn)


def _newton_iterate(residual_fn, jacobian_fn, guess, cfg, res_norm_fn, state_norm_fn,
                    deflation, distinct_fn) -> SolveResult:
    y = np.array(guess, dtype=float).copy()
    if deflation is not None and deflation.roots:
        _, dists = deflation._diffs_and_distances(y)
        scale = max(1.0, state_norm_fn(y))
        if min(dists) <= 1e-12 * scale:
            return SolveResult(y, False, 0, np.inf, "deflation_singular_guess")

    r = residual_fn(y)
    rnorm = res_norm_fn(r)
    growth = 0
    for k in range(cfg.max_iter + 1):
        if not np.isfinite(rnorm):
            return SolveResult(y, False, k, rnorm, "nonfinite_residual")
        if rnorm < cfg.tol:
            if distinct_fn is not None and not distinct_fn(y):
                return SolveResult(y, False, k, rnorm, "converged_to_known_root")
            return SolveResult(y, True, k, rnorm, None)
        if k == cfg.max_iter:
            break
        try:
            du = np.linalg.solve(jacobian_fn(y), -r)
        except np.linalg.LinAlgError:
            return SolveResult(y, False, k, rnorm, "singular_jacobian")
        if not np.all(np.isfinite(du)):
            return SolveResult(y, False, k, rnorm, "nonfinite_step")
        if deflation is not None:
            try:
                m = deflation.scalar(y)
                grad = deflation.gradient(y)
            except DeflationSingularity:
                return SolveResult(y, False, k, rnorm, "deflation_singular_guess")
            denom = 1.0 - float(grad @ du) / m
            if abs(denom) < STALL_THRESHOLD:
                return SolveResult(y, False, k, rnorm, "deflation_stall")
            du = du / denom
        y = y + du
        if state_norm_fn(y) > cfg.divergence_norm:
            return SolveResult(y, False, k + 1, rnorm, "divergence_norm")
        r = residual_fn(y)
        new_rnorm = res_norm_fn(r)
        growth = growth + 1 if new_rnorm > rnorm else 0
        if growth >= cfg.divergence_iter:
            return SolveResult(y, False, k + 1, new_rnorm, "residual_growth")
        rnorm = new_rnorm
    return SolveResult(y, False, cfg.max_iter, rnorm, "max_iter")


def newton(model: ParametricModel, mu: float, guess: np.ndarray,
           cfg: NewtonConfig | None = None) -> SolveResult:
    """Full-order Newton; converges when the residual X-norm drops below cfg.tol."""
    cfg = cfg or NewtonConfig()
    return _newton_core(
        lambda y: model.residual(y, mu),
        lambda y: model.jacobian(y, mu),
        guess, cfg, model.x_norm, model.x_norm,
    )


def deflated_newton(model: ParametricModel, mu: float, guess: np.ndarray,
                    roots, cfg: NewtonConfig | None = None,
                    power_r: float = 2.0, shift_sigma: float = 1.0) -> SolveResult:
    """Full-order Newton repelled from `roots` (a RootSet or list of states).

    With an empty root list this reproduces `newton` bit for bit: the deflation
    factor is the empty product 1 and the step scaling is exactly 1.0.
    """
    cfg = cfg or NewtonConfig()
    root_list = list(roots)
    deflation = DeflationOperator(root_list, power_r, shift_sigma, metric=model.x_matrix)
    guard = RootSet(model, mu, roots=root_list)
    return _newton_core(
        lambda y: model.residual(y, mu),
        lambda y: model.jacobian(y, mu),
        guess, cfg, model.x_norm, model.x_norm,
        deflation=deflation,
        distinct_fn=guard.is_distinct if root_list else None,
    )


def discover_solutions(model: ParametricModel, mu: float, guesses,
                       cfg: NewtonConfig | None = None,
                       power_r: float = 2.0, shift_sigma: float = 1.0) -> RootSet:
    """Collect the distinct solutions reachable from `guesses` at one parameter.

    Plain Newton runs from the first guess; afterwards every guess is driven
    through deflated Newton against the accumulated roots until it diverges,
    so each new root immediately deflects the following attempts.
    """
    cfg = cfg or NewtonConfig()
    guesses = [np.asarray(g, dtype=float) for g in guesses]
    if not guesses:
        raise ValueError("discover_solutions needs at least one initial guess")
    found = RootSet(model, mu)
    first = newton(model, mu, guesses[0], cfg)
    if first.converged:
        found.add(first.u)
    for g in guesses:
        while True:
            res = deflated_newton(model, mu, g, found, cfg, power_r, shift_sigma)
            if not res.converged or not found.add(res.u):
                break
    return found
