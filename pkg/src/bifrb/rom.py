"""Reduced basis handling and Galerkin-projected solvers.

A basis is a dense N_h x N matrix with X-orthonormal columns; the reduced
residual and Jacobian are plain Galerkin projections

    G_N(u_N) = B^T G(B u_N),        Jac_N(u_N) = B^T Jac(B u_N) B,

so no hyper-reduction takes place and every reduced solve assembles at full
order.  Reduced Newton iterates on coefficient vectors with a Euclidean
convergence test, which by orthonormality agrees with the X-norm of the lifted
increment.  Reduced deflation therefore measures root distances in the
Euclidean metric and otherwise mirrors the full-order scaled-step solver.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ParametricModel, make_model
from .nlsolve import DeflationOperator, NewtonConfig, SolveResult, _newton_core

__all__ = [
    "REJECTION_TOL",
    "NULL_TOL",
    "EnrichResult",
    "BasisMatrix",
    "gram_schmidt_enrich",
    "reduced_residual",
    "reduced_jacobian",
    "reduced_newton",
    "reduced_deflated_newton",
    "GuessStore",
]

# A candidate whose orthogonal component is below this fraction of its own
# X-norm carries no new information and is rejected.
REJECTION_TOL = 1e-8

# Snapshots with X-norm at or below solver-noise scale are the zero function
# for all practical purposes; normalizing them would enrich pure noise.
NULL_TOL = 1e-8


@dataclass
class EnrichResult:
    status: str  # "enriched" | "rejected"
    cause: str | None = None  # "null_snapshot" | "redundant" for rejections
    vector: np.ndarray | None = None

    @property
    def enriched(self) -> bool:
        return self.status == "enriched"


class BasisMatrix:
    """X-orthonormal basis that grows one Gram-Schmidt-filtered column at a time."""

    def __init__(self, model: ParametricModel, columns: np.ndarray | None = None,
                 mu_values: list | None = None):
        self.model = model
        if columns is None:
            columns = np.zeros((model.mesh_size, 0))
        self._columns = np.asarray(columns, dtype=float).reshape(model.mesh_size, -1)
        # Parameter value each column's snapshot was taken at (None if unknown).
        self.mu_values = list(mu_values) if mu_values is not None else [None] * self._columns.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return self._columns

    @property
    def n(self) -> int:
        return self._columns.shape[1]

    def __len__(self) -> int:
        return self.n

    def enrich(self, snapshot: np.ndarray, mu: float | None = None) -> EnrichResult:
        """Append the X-normalized orthogonal component of `snapshot`, if any.

        Two Gram-Schmidt passes keep the orthonormality defect at roundoff
        level.  Null snapshots and snapshots whose orthogonal component falls
        below REJECTION_TOL relative to their own norm are rejected.
        """
        u = np.asarray(snapshot, dtype=float)
        norm_u = self.model.x_norm(u)
        if norm_u <= NULL_TOL:
            return EnrichResult("rejected", "null_snapshot")
        w = u.copy()
        for _ in range(2):
            if self.n:
                coeffs = self._columns.T @ (self.model.x_matrix @ w)
                w = w - self._columns @ coeffs
        norm_w = self.model.x_norm(w)
        if norm_w <= REJECTION_TOL * norm_u:
            return EnrichResult("rejected", "redundant")
        xi = w / norm_w
        self._columns = np.column_stack([self._columns, xi])
        self.mu_values.append(mu)
        return EnrichResult("enriched", vector=xi)

    def lift(self, u_n: np.ndarray) -> np.ndarray:
        """Map reduced coefficients to the full-order state B u_N."""
        return self._columns @ np.asarray(u_n, dtype=float)

    def project(self, u_h: np.ndarray) -> np.ndarray:
        """X-orthogonal projection coefficients B^T X u_h."""
        return self._columns.T @ (self.model.x_matrix @ np.asarray(u_h, dtype=float))

    def projection_error(self, u_h: np.ndarray) -> float:
        return self.model.x_norm(u_h - self.lift(self.project(u_h)))

    def orthonormality_defect(self) -> float:
        gram = self._columns.T @ self.model.x_matrix @ self._columns
        return float(np.max(np.abs(gram - np.eye(self.n)))) if self.n else 0.0

    def truncated(self, n: int) -> "BasisMatrix":
        """First-n-columns sub-basis (greedy and POD bases are nested)."""
        if not 0 <= n <= self.n:
            raise ValueError(f"truncation size must lie in [0, {self.n}]")
        return BasisMatrix(self.model, self._columns[:, :n].copy(), self.mu_values[:n])

    # -- persistence --------------------------------------------------------

    def save(self, csv_path, json_path=None) -> None:
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        np.savetxt(csv_path, self._columns, delimiter=",", fmt="%.17g")
        meta = {
            "model_kind": self.model.kind.value,
            "mesh_size": self.model.mesh_size,
            "n_basis": self.n,
            "mu_train": [None if m is None else float(m) for m in self.mu_values],
        }
        json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, csv_path, json_path=None, model: ParametricModel | None = None) -> "BasisMatrix":
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        meta = json.loads(json_path.read_text())
        if model is None:
            model = make_model(meta["model_kind"], meta["mesh_size"])
        elif model.kind.value != meta["model_kind"] or model.mesh_size != meta["mesh_size"]:
            raise ValueError("basis metadata does not match the supplied model")
        cols = np.loadtxt(csv_path, delimiter=",", ndmin=2)
        if cols.shape != (meta["mesh_size"], meta["n_basis"]):
            raise ValueError("basis matrix shape does not match its metadata")
        basis = cls(model, cols, meta["mu_train"])
        defect = basis.orthonormality_defect()
        if defect > 1e-10:
            raise ValueError(f"loaded basis is not X-orthonormal (defect {defect:.3e})")
        return basis


def gram_schmidt_enrich(basis: BasisMatrix, snapshot: np.ndarray,
                        mu: float | None = None) -> EnrichResult:
    return basis.enrich(snapshot, mu)


def reduced_residual(basis: BasisMatrix, u_n: np.ndarray, mu: float) -> np.ndarray:
    return basis.matrix.T @ basis.model.residual(basis.lift(u_n), mu)


def reduced_jacobian(basis: BasisMatrix, u_n: np.ndarray, mu: float) -> np.ndarray:
    return basis.matrix.T @ basis.model.jacobian(basis.lift(u_n), mu) @ basis.matrix


def _require_nonempty(basis: BasisMatrix) -> None:
    if basis.n == 0:
        raise ValueError("reduced solve requires a nonempty basis")


def reduced_newton(basis: BasisMatrix, mu: float, guess: np.ndarray,
                   cfg: NewtonConfig | None = None) -> SolveResult:
    """Newton on the reduced system; converges on the Euclidean norm of G_N."""
    _require_nonempty(basis)
    cfg = cfg or NewtonConfig()
    return _newton_core(
        lambda y: reduced_residual(basis, y, mu),
        lambda y: reduced_jacobian(basis, y, mu),
        guess, cfg, np.linalg.norm, np.linalg.norm,
    )


def reduced_deflated_newton(basis: BasisMatrix, mu: float, guess: np.ndarray,
                            roots, cfg: NewtonConfig | None = None,
                            power_r: float = 2.0, shift_sigma: float = 1.0) -> SolveResult:
    """Reduced Newton repelled from the given reduced roots (Euclidean metric)."""
    _require_nonempty(basis)
    cfg = cfg or NewtonConfig()
    root_list = [np.asarray(r, dtype=float) for r in roots]
    deflation = DeflationOperator(root_list, power_r, shift_sigma, metric=None)

    def distinct(y):
        ny = np.linalg.norm(y)
        for v in root_list:
            if np.linalg.norm(y - v) <= 1e-6 * max(1.0, ny, np.linalg.norm(v)):
                return False
        return True

    return _newton_core(
        lambda y: reduced_residual(basis, y, mu),
        lambda y: reduced_jacobian(basis, y, mu),
        guess, cfg, np.linalg.norm, np.linalg.norm,
        deflation=deflation,
        distinct_fn=distinct if root_list else None,
    )


@dataclass
class GuessStore:
    """Warm starts threaded through greedy iterations.

    `hf` collects full-order guesses (the model battery plus every root the
    deflated snapshot stage finds).  `rb` maps parameter -> reduced roots from
    the most recent estimator sweep; when the basis grows, stored coefficient
    vectors are zero-padded, which lifts to the same full-order state.
    """

    model: ParametricModel
    hf: list = field(default_factory=list)
    rb: dict = field(default_factory=dict)

    def add_hf(self, u: np.ndarray, threshold: float = 1e-6) -> bool:
        u = np.asarray(u, dtype=float)
        nu = self.model.x_norm(u)
        for v in self.hf:
            if self.model.x_norm(u - v) <= threshold * max(1.0, nu, self.model.x_norm(v)):
                return False
        self.hf.append(u.copy())
        return True

    def set_rb(self, mu: float, roots) -> None:
        self.rb[float(mu)] = [np.asarray(r, dtype=float).copy() for r in roots]

    def rb_for(self, mu: float, n: int) -> list:
        """Stored reduced guesses at mu, zero-padded to basis size n."""
        out = []
        for r in self.rb.get(float(mu), []):
            if len(r) < n:
                r = np.concatenate([r, np.zeros(n - len(r))])
            out.append(r[:n])
        return out

    def pad_to(self, n: int) -> None:
        for mu, roots in self.rb.items():
            self.rb[mu] = [np.concatenate([r, np.zeros(n - len(r))]) if len(r) < n else r[:n]
                           for r in roots]
