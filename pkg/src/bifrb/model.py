"""P1 finite-element discretizations of two parametric 1D boundary value problems.

Both problems live on (0, 1) with homogeneous Dirichlet conditions and a scalar
parameter mu multiplying the nonlinearity:

    Bratu            -u'' - mu * exp(u)     = 0   (fold of two branches)
    Chafee-Infante   -u'' - mu * (u - u**3) = 0   (pitchfork at mu = pi**2)

Boundary dofs are eliminated, so a state vector holds the mesh_size interior
nodal values.  The energy inner product <u, v>_X = int u' v' dx (stiffness
matrix) is used for all norms, projections and error measures.  Nonlinear
terms are integrated with a two-point Gauss rule per element; matrices are
stored dense, which is comfortable at the intended sizes (mesh_size <= 500).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, eigh

__all__ = [
    "ModelKind",
    "ParameterSpace",
    "ParametricModel",
    "Bratu1D",
    "ChafeeInfante1D",
    "make_model",
]

# Two-point Gauss nodes on the reference element [0, 1] and the shared weight.
_GAUSS_T = np.array([0.5 * (1.0 - 1.0 / np.sqrt(3.0)), 0.5 * (1.0 + 1.0 / np.sqrt(3.0))])


class ModelKind(str, Enum):
    BRATU1D = "bratu"
    CHAFEE_INFANTE1D = "chafee"


@dataclass(frozen=True)
class ParameterSpace:
    """Closed parameter interval with an ordered training grid inside it."""

    lower: float
    upper: float
    train_points: tuple[float, ...]

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("parameter interval must satisfy lower < upper")
        pts = np.asarray(self.train_points, dtype=float)
        if pts.size < 1:
            raise ValueError("training grid must contain at least one point")
        if np.any(np.diff(pts) <= 0.0):
            raise ValueError("training grid must be strictly increasing")
        if pts[0] < self.lower or pts[-1] > self.upper:
            raise ValueError("training grid must lie inside [lower, upper]")
        object.__setattr__(self, "train_points", tuple(float(p) for p in pts))

    @classmethod
    def equispaced(cls, lower: float, upper: float, n_train: int) -> "ParameterSpace":
        if n_train < 2:
            raise ValueError("equispaced training grid needs n_train >= 2")
        return cls(lower, upper, tuple(np.linspace(lower, upper, n_train)))

    def with_points(self, extra: np.ndarray) -> "ParameterSpace":
        """New space whose grid is the sorted union with `extra` (deduplicated)."""
        merged = np.unique(np.concatenate([np.asarray(self.train_points), np.asarray(extra, dtype=float)]))
        # Drop near-duplicates that only differ by roundoff of the grid arithmetic.
        keep = np.concatenate([[True], np.diff(merged) > 1e-12 * (self.upper - self.lower)])
        return ParameterSpace(self.lower, self.upper, tuple(merged[keep]))

    def __len__(self) -> int:
        return len(self.train_points)


class ParametricModel:
    """Shared FE machinery; subclasses provide the nonlinear source term g(u).

    The residual of the weak form reads

        G(u; mu) = K u - mu * load(g(u)),      Jac(u; mu) = K - mu * M_w(g'(u)),

    with K the stiffness matrix, load(.) the Gauss-quadrature load vector and
    M_w(.) the weighted mass matrix with pointwise weight g'(u).
    """

    kind: ModelKind
    # End of the parameter range with the fewest coexisting branches; sampling
    # strategies take their first snapshot there.
    uniqueness_side = "upper"

    def __init__(self, mesh_size: int = 201):
        if mesh_size < 1:
            raise ValueError("mesh_size must be a positive number of interior nodes")
        self.mesh_size = int(mesh_size)
        self.h = 1.0 / (self.mesh_size + 1)
        self.nodes = self.h * np.arange(1, self.mesh_size + 1)
        self.x_matrix = self._stiffness()
        # Cholesky factors of X, reused for dual norms and inf-sup computations.
        self._x_cho = cho_factor(self.x_matrix, lower=True)
        self.x_chol_lower = cholesky(self.x_matrix, lower=True)
        self._embedding_cache: dict[float, float] = {}

    # -- assembly -----------------------------------------------------------

    def _stiffness(self) -> np.ndarray:
        m, h = self.mesh_size, self.h
        K = np.zeros((m, m))
        idx = np.arange(m)
        K[idx, idx] = 2.0 / h
        K[idx[:-1], idx[:-1] + 1] = -1.0 / h
        K[idx[1:], idx[1:] - 1] = -1.0 / h
        return K

    def _gauss_values(self, u: np.ndarray) -> np.ndarray:
        """State values at the two Gauss points of every element, shape (m+1, 2)."""
        ue = np.concatenate([[0.0], u, [0.0]])
        left, right = ue[:-1], ue[1:]
        return left[:, None] * (1.0 - _GAUSS_T) + right[:, None] * _GAUSS_T

    def _load(self, values: np.ndarray) -> np.ndarray:
        """Load vector int f(x) phi_i dx from per-Gauss-point values f, shape (m+1, 2)."""
        w = 0.5 * self.h
        contrib_left = w * values @ (1.0 - _GAUSS_T)
        contrib_right = w * values @ _GAUSS_T
        return contrib_right[:-1] + contrib_left[1:]

    def _weighted_mass(self, weights: np.ndarray) -> np.ndarray:
        """Matrix int w(x) phi_i phi_j dx from per-Gauss-point weights, shape (m+1, 2)."""
        m = self.mesh_size
        w = 0.5 * self.h
        d11 = w * weights @ (1.0 - _GAUSS_T) ** 2
        d22 = w * weights @ _GAUSS_T**2
        d12 = w * weights @ (_GAUSS_T * (1.0 - _GAUSS_T))
        M = np.zeros((m, m))
        idx = np.arange(m)
        M[idx, idx] = d22[:-1] + d11[1:]
        M[idx[:-1], idx[:-1] + 1] = d12[1:-1]
        M[idx[1:], idx[1:] - 1] = d12[1:-1]
        return M

    def _source(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _source_prime(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def residual(self, u: np.ndarray, mu: float) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.mesh_size,):
            raise ValueError(f"state vector must have shape ({self.mesh_size},)")
        g = self._source(self._gauss_values(u))
        return self.x_matrix @ u - mu * self._load(g)

    def jacobian(self, u: np.ndarray, mu: float) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.mesh_size,):
            raise ValueError(f"state vector must have shape ({self.mesh_size},)")
        gp = self._source_prime(self._gauss_values(u))
        return self.x_matrix - mu * self._weighted_mass(gp)

    # -- geometry -----------------------------------------------------------

    def x_inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(u @ (self.x_matrix @ v))

    def x_norm(self, u: np.ndarray) -> float:
        q = self.x_inner(u, u)
        # Quadratic forms of huge states overflow to +-inf/nan; report inf so
        # the solvers take their divergence path instead of a fake zero norm.
        if not np.isfinite(q):
            return float("inf")
        return float(np.sqrt(max(q, 0.0)))

    def x_dual_norm(self, g: np.ndarray) -> float:
        """Norm of a residual/functional vector in the dual metric X^{-1}."""
        q = float(g @ cho_solve(self._x_cho, g))
        if not np.isfinite(q):
            return float("inf")
        return float(np.sqrt(max(q, 0.0)))

    def x_solve(self, g: np.ndarray) -> np.ndarray:
        return cho_solve(self._x_cho, g)

    def interpolate(self, f) -> np.ndarray:
        return np.asarray(f(self.nodes), dtype=float)

    def value_at(self, u: np.ndarray, x: float) -> float:
        """Piecewise-linear evaluation of the FE function at a point of [0, 1]."""
        ue = np.concatenate([[0.0], np.asarray(u, dtype=float), [0.0]])
        grid = np.concatenate([[0.0], self.nodes, [1.0]])
        return float(np.interp(x, grid, ue))

    def midpoint_value(self, u: np.ndarray) -> float:
        return self.value_at(u, 0.5)

    # -- model-specific constants ------------------------------------------

    def embedding_constant(self, p: float) -> float:
        """Discrete Sobolev constant rho_p with ||v||_{L^p} <= rho_p ||v'||_{L2}.

        p = inf returns the exact H^1_0(0,1) -> L^inf constant 1/2.  p = 4 runs
        the eigenvalue/fixed-point iteration for rho_4**2 = sup ||v||_{L4}**2 /
        ||v'||_{L2}**2 on the discrete space and returns the square root.
        """
        if p == np.inf or p == "inf":
            return 0.5
        if p != 4:
            raise ValueError("only p = 4 and p = inf are supported")
        if 4.0 not in self._embedding_cache:
            self._embedding_cache[4.0] = self._l4_embedding_constant()
        return self._embedding_cache[4.0]

    def _l4_quartic(self, v: np.ndarray) -> float:
        vals = self._gauss_values(v)
        return float(0.5 * self.h * np.sum(vals**4))

    def _l4_embedding_constant(self, tol: float = 1e-8, max_iter: int = 500) -> float:
        # Maximize sqrt(int v^4) / int v'^2 (scale invariant).  Stationarity is
        # the generalized eigenproblem W(v) z = lam K z with W the v^2-weighted
        # mass matrix, solved repeatedly for the top eigenpair.
        v = self.interpolate(lambda x: np.sin(np.pi * x))
        v = v / self.x_norm(v)
        ratio = np.sqrt(self._l4_quartic(v))
        for _ in range(max_iter):
            W = self._weighted_mass(self._gauss_values(v) ** 2)
            _, vecs = eigh(W, self.x_matrix, subset_by_index=[self.mesh_size - 1, self.mesh_size - 1])
            v = vecs[:, 0] / self.x_norm(vecs[:, 0])
            new_ratio = np.sqrt(self._l4_quartic(v))
            if abs(new_ratio - ratio) < tol:
                return float(np.sqrt(new_ratio))
            ratio = new_ratio
        raise RuntimeError("L4 embedding fixed point did not converge within 500 iterations")

    def lipschitz_constant(self, u: np.ndarray, mu: float, radius: float) -> float:
        """Jacobian Lipschitz bound on the X-ball of `radius` around state `u`."""
        raise NotImplementedError

    # -- defaults used by the solvers and samplers -------------------------

    @property
    def default_guess(self) -> np.ndarray:
        return self.default_guesses[0]

    @property
    def default_guesses(self) -> list[np.ndarray]:
        raise NotImplementedError

    def default_interval(self) -> tuple[float, float]:
        raise NotImplementedError


class Bratu1D(ParametricModel):
    """-u'' - mu e^u = 0; two branches folding at mu* ~ 3.5138, none beyond.

    The guess battery is an amplitude ladder: the zero guess sits in the lower
    branch's Newton basin, while the upper branch (deflated or plain) is only
    reachable from guesses of comparable amplitude since the full-step deflated
    iteration started at zero bounces chaotically and blows up.
    """

    kind = ModelKind.BRATU1D

    def _source(self, v):
        return np.exp(v)

    def _source_prime(self, v):
        return np.exp(v)

    def lipschitz_constant(self, u, mu, radius):
        if radius < 0.0:
            raise ValueError("radius must be nonnegative")
        rho = self.embedding_constant(np.inf)
        return float(mu * rho**2 * np.exp(rho * (self.x_norm(u) + radius)))

    @property
    def default_guesses(self):
        bump = self.interpolate(lambda x: 4.0 * x * (1.0 - x))
        return [np.zeros(self.mesh_size), 2.0 * bump, 4.0 * bump]

    def default_interval(self):
        return (0.5, 2.0)


class ChafeeInfante1D(ParametricModel):
    """-u'' - mu (u - u^3) = 0; pitchfork from the zero branch at mu = pi^2.

    The zero vector solves the discrete problem exactly for every mu, so the
    default initial guesses are the +-sin(pi x) interpolants: a zero guess
    would sit on the trivial root and Newton could never leave it.
    """

    kind = ModelKind.CHAFEE_INFANTE1D
    # Below pi^2 the zero branch is the only solution.
    uniqueness_side = "lower"

    def _source(self, v):
        return v - v**3

    def _source_prime(self, v):
        return 1.0 - 3.0 * v**2

    def lipschitz_constant(self, u, mu, radius):
        if radius < 0.0:
            raise ValueError("radius must be nonnegative")
        rho4 = self.embedding_constant(4)
        return float(6.0 * mu * rho4**2 * (self.x_norm(u) + radius))

    @property
    def default_guesses(self):
        guess = self.interpolate(lambda x: np.sin(np.pi * x))
        return [guess, -guess]

    def default_interval(self):
        return (5.0, 15.0)


def make_model(kind: ModelKind | str, mesh_size: int = 201) -> ParametricModel:
    kind = ModelKind(kind)
    if kind is ModelKind.BRATU1D:
        return Bratu1D(mesh_size)
    return ChafeeInfante1D(mesh_size)
