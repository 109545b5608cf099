"""Regularized least squares in finite-dimensional cylinder subspaces.

Subspaces here are spans of affine functionals of a measure,
``l(mu) = <f, mu>`` for feature functions ``f`` (constants are the
feature ``1`` since measures have unit mass).  Linear combinations stay
in the family, which makes double orthogonalization a finite
generalized eigenproblem and keeps every Gram assembly a dense matrix
product.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .cylinder import CylinderFunction, grid_gradients, identity_outer
from .errors import RankDeficient, Singular
from .measures import GroundSpace

_RESIDUAL_TOL = 1e-10
_GRAM_TOL = 1e-8


def as_weight_matrix(sample) -> np.ndarray:
    """Stack a measure list (or pass through a matrix) as (N, m) weights."""
    if isinstance(sample, np.ndarray):
        return sample
    return np.array([mu.weights for mu in sample])


class CylinderSubspace:
    """Span of affine functionals ``l_i(mu) = <coeffs_i @ features, mu>``.

    Parameters
    ----------
    ground : GroundSpace
    features : (F, m) array_like
        Feature functions on the ground points.
    coeffs : (n, F) array_like, optional
        Basis coordinates in feature space; identity when omitted.
    provenance : str
        ``"raw"`` or ``"double-orthogonal"``.
    """

    def __init__(self, ground: GroundSpace, features, coeffs=None, provenance="raw"):
        self.ground = ground
        self.features = np.atleast_2d(np.asarray(features, dtype=float))
        if self.features.shape[1] != ground.size:
            raise ValueError("features must be vectors over the ground points")
        F = self.features.shape[0]
        self.coeffs = np.eye(F) if coeffs is None else np.atleast_2d(np.asarray(coeffs, float))
        if self.coeffs.shape[1] != F:
            raise ValueError("coeffs do not match the feature count")
        self.provenance = provenance
        self._feature_grads = None

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    @property
    def feature_grads(self) -> np.ndarray:
        if self._feature_grads is None:
            self._feature_grads = np.stack(
                [grid_gradients(self.ground, f) for f in self.features]
            )
        return self._feature_grads

    def basis_fields(self) -> np.ndarray:
        """Gradient fields of the basis functions, shape (n, m, d);
        constant in the measure because the functionals are affine."""
        return np.einsum("nf,fmd->nmd", self.coeffs, self.feature_grads)

    def evaluate(self, sample) -> np.ndarray:
        """Basis evaluations, shape (N, n)."""
        W = as_weight_matrix(sample)
        return W @ self.features.T @ self.coeffs.T

    def l2_gram(self, sample, weights=None) -> np.ndarray:
        E = self.evaluate(sample)
        qw = _quad(E.shape[0], weights)
        return E.T @ (qw[:, None] * E)

    def energy_gram(self, sample, weights=None) -> np.ndarray:
        W = as_weight_matrix(sample)
        qw = _quad(W.shape[0], weights)
        mean_measure = qw @ W
        g = self.basis_fields()
        return np.einsum("imd,hmd,m->ih", g, g, mean_measure)

    def energies(self, sample, weights=None) -> np.ndarray:
        """Per-basis-function quadratic energies on the given data."""
        return np.diag(self.energy_gram(sample, weights)).copy()

    @property
    def basis(self) -> list:
        """The basis as explicit cylinder functions (identity outer maps
        over the combined features)."""
        combined = self.coeffs @ self.features
        return [
            CylinderFunction(self.ground, f[None, :], identity_outer()) for f in combined
        ]

    def transform(self, C) -> "CylinderSubspace":
        return CylinderSubspace(
            self.ground,
            self.features,
            np.asarray(C, float) @ self.coeffs,
            provenance=self.provenance,
        )

    def combine(self, w) -> CylinderFunction:
        """Single cylinder function ``sum_i w_i l_i``."""
        f = (np.asarray(w, float) @ self.coeffs) @ self.features
        return CylinderFunction(self.ground, f[None, :], identity_outer())


def _quad(n, weights):
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    if w.shape[0] != n or np.any(w < 0):
        raise ValueError("quadrature weights must be nonnegative, one per sample point")
    return w


def double_orthogonalize(raw: CylinderSubspace, sample, weights=None) -> CylinderSubspace:
    """Basis orthonormal in L2 and orthogonal in energy, simultaneously.

    Solves the generalized symmetric eigenproblem of the energy Gram
    against the L2 Gram; the eigenvector matrix is the change of basis.

    Raises
    ------
    RankDeficient
        If the basis evaluations are numerically dependent on the data.
    """
    A = raw.l2_gram(sample, weights)
    eigs = np.linalg.eigvalsh(A)
    rank = int(np.sum(eigs > max(eigs.max(), 0.0) * 1e-12))
    if rank < raw.dim:
        raise RankDeficient(
            f"basis has numerical rank {rank} < {raw.dim} on the sample", rank
        )
    B = raw.energy_gram(sample, weights)
    _, V = sla.eigh(B, A)
    out = raw.transform(V.T)
    out.provenance = "double-orthogonal"

    new_A = out.l2_gram(sample, weights)
    new_B = out.energy_gram(sample, weights)
    assert np.abs(new_A - np.eye(out.dim)).max() <= _GRAM_TOL
    assert np.abs(new_B - np.diag(np.diag(new_B))).max() <= _GRAM_TOL
    return out


@dataclass
class GramSystem:
    """Matrices of the regularized least-squares problem.

    ``L[j, i] = l_i(mu_j) / sqrt(N)``, ``D`` the sample energy Gram,
    ``gamma`` the per-function population energies when available,
    ``yF[i] = (1/N) sum_j values_j l_i(mu_j)``.
    """

    L: np.ndarray
    D: np.ndarray
    lam: float
    yF: np.ndarray
    gamma: Optional[np.ndarray] = None
    values_sq_mean: float = 0.0

    def __post_init__(self):
        if np.abs(self.D - self.D.T).max() > 1e-10:
            raise ValueError("energy Gram must be symmetric")
        if np.linalg.eigvalsh(self.D).min() < -1e-10:
            raise ValueError("energy Gram must be positive semidefinite")

    @property
    def normal_matrix(self) -> np.ndarray:
        return self.L.T @ self.L + self.lam * self.D

    def objective(self, w: np.ndarray) -> float:
        """``(1/N) sum_j (F_j - G_j)^2 + lam w^T D w`` at coefficients w."""
        w = np.asarray(w, float)
        quad = w @ (self.L.T @ self.L) @ w
        return float(
            self.values_sq_mean - 2.0 * w @ self.yF + quad + self.lam * w @ self.D @ w
        )


def assemble(
    subspace: CylinderSubspace,
    sample,
    values,
    lam: float,
    gamma: Optional[np.ndarray] = None,
) -> GramSystem:
    """Build the Gram system for a fitting sample and target values."""
    W = as_weight_matrix(sample)
    values = np.asarray(values, dtype=float)
    N = W.shape[0]
    if values.shape[0] != N:
        raise ValueError("one target value per sample measure is required")
    E = subspace.evaluate(W)
    sv = np.linalg.svd(E, compute_uv=False)
    rank = int(np.sum(sv > sv.max() * 1e-12)) if sv.size else 0
    if rank < subspace.dim:
        raise RankDeficient(
            f"basis evaluations have numerical rank {rank} < {subspace.dim}", rank
        )
    L = E / np.sqrt(N)
    D = subspace.energy_gram(W)
    yF = E.T @ values / N
    return GramSystem(
        L=L,
        D=D,
        lam=float(lam),
        yF=yF,
        gamma=gamma,
        values_sq_mean=float(np.mean(values**2)),
    )


@dataclass
class FitResult:
    """Solution of the regularized normal equations."""

    coefficients: np.ndarray
    subspace: CylinderSubspace
    system: GramSystem = field(repr=False)
    diagnostics: dict = field(default_factory=dict)
    truncation: Optional[float] = None

    def predict(self, sample) -> np.ndarray:
        out = self.subspace.evaluate(sample) @ self.coefficients
        if self.truncation is not None:
            out = np.clip(out, -self.truncation, self.truncation)
        return out

    def as_cylinder_function(self) -> CylinderFunction:
        return self.subspace.combine(self.coefficients)


def solve_regularized(subspace: CylinderSubspace, system: GramSystem) -> FitResult:
    """Solve ``(L^T L + lam D) w = yF`` by SPD factorization.

    A diagonal jitter of ``1e-12 * trace / n`` is added once if the
    factorization fails; the jitter is reported in the diagnostics.

    Raises
    ------
    Singular
        If the jittered system still fails to factor.
    """
    M = system.normal_matrix
    n = M.shape[0]
    jitter = 0.0
    try:
        c, low = sla.cho_factor(M)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * np.trace(M) / n
        try:
            c, low = sla.cho_factor(M + jitter * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise Singular("normal equations singular even after jitter") from exc
    w = sla.cho_solve((c, low), system.yF)

    residual = float(np.linalg.norm(M @ w - system.yF))
    if residual > _RESIDUAL_TOL * (1.0 + np.linalg.norm(system.yF)):
        raise Singular(f"linear-system residual {residual:.3e} exceeds tolerance")

    # quadratic objective: probe perturbations must not improve it
    obj = system.objective(w)
    probe_ok = True
    for i in range(n):
        for step in (1e-4, -1e-4):
            e = np.zeros(n)
            e[i] = step
            if system.objective(w + e) < obj - 1e-12 * (1.0 + abs(obj)):
                probe_ok = False
    diag = {
        "residual": residual,
        "objective": obj,
        "jitter": jitter,
        "local_optimum": probe_ok,
    }
    return FitResult(coefficients=w, subspace=subspace, system=system, diagnostics=diag)


def truncate(fit: FitResult, M: float) -> FitResult:
    """Clamp the fitted function to ``[-M, M]`` pointwise."""
    if M <= 0:
        raise ValueError("truncation level must be positive")
    return FitResult(
        coefficients=fit.coefficients,
        subspace=fit.subspace,
        system=fit.system,
        diagnostics=dict(fit.diagnostics),
        truncation=float(M),
    )


def truncate_values(values, M: float) -> np.ndarray:
    return np.clip(np.asarray(values, dtype=float), -M, M)


def add_noise(values, sigma: float, seed: int) -> np.ndarray:
    """Seeded i.i.d. Gaussian perturbations of variance ``sigma^2``."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    values = np.asarray(values, dtype=float)
    if sigma == 0.0:
        return values.copy()
    rng = np.random.default_rng(seed)
    return values + rng.normal(0.0, sigma, size=values.shape)


def c_delta(delta: float) -> float:
    """Chernoff exponent constant ``(1 + d) log(1 + d) - d``."""
    return (1.0 + delta) * np.log1p(delta) - delta


@dataclass(frozen=True)
class ConditionReport:
    """Sampling condition diagnostics for a basis and sample size."""

    n: int
    N: int
    r: float
    lam: float
    K: float
    sigma_min: float
    sigma_max: float
    c_value: float
    required: float
    actual: float
    satisfied: bool
    K_at_least_n: bool


def condition_check(
    subspace: CylinderSubspace,
    sample,
    lam: float,
    r: float,
    gamma: Optional[np.ndarray] = None,
    weights=None,
) -> ConditionReport:
    """Check ``N / log N >= (1 + r) K / (sigma_min c_{1/(2 sigma_max)})``.

    ``K`` is the max over the sample of
    ``sum_i (l_i(mu)^2 + lam int |D l_i|^2 dmu)``; ``gamma`` defaults to
    the per-function energies on the same sample.
    """
    W = as_weight_matrix(sample)
    N = W.shape[0]
    E = subspace.evaluate(W)
    g = subspace.basis_fields()
    field_sq = np.einsum("imd,imd->m", g, g)
    per_sample = (E**2).sum(axis=1) + lam * (W @ field_sq)
    K = float(per_sample.max())
    if gamma is None:
        gamma = subspace.energies(W, weights)
    sigma_min = 1.0 + lam * float(np.min(gamma))
    sigma_max = 1.0 + lam * float(np.max(gamma))
    c_value = c_delta(1.0 / (2.0 * sigma_max))
    required = (1.0 + r) * K / (sigma_min * c_value)
    actual = N / np.log(N) if N >= 2 else 0.0
    return ConditionReport(
        n=subspace.dim,
        N=N,
        r=r,
        lam=lam,
        K=K,
        sigma_min=sigma_min,
        sigma_max=sigma_max,
        c_value=c_value,
        required=required,
        actual=actual,
        satisfied=bool(N >= 2 and actual >= required),
        K_at_least_n=bool(K >= subspace.dim - 1e-9),
    )


def bound_rhs(
    e: float,
    lam: float,
    gamma,
    sigma: float,
    M: float,
    N: int,
    n: int,
    r: float,
    proj_energy: float = 0.0,
) -> float:
    """Noisy-data generalization bound.

    ``2 e (1 + c_{1/2} / (log N (1+r) (1/2 + lam mu_min)^2))
    + 8 lam proj_energy + 4 sigma^2 n / ((1 + lam mu_min)^2 N)
    + 2 M^2 N^{-r}``, with ``mu_min = min(gamma)``.  ``proj_energy`` is
    the energy of the subspace projection of the target; with a
    double-orthogonal basis it is ``sum_i z_i^2 gamma_i`` for projection
    coefficients ``z``.
    """
    mu_min = float(np.min(np.asarray(gamma, dtype=float)))
    t1 = 2.0 * e * (1.0 + c_delta(0.5) / (np.log(N) * (1.0 + r) * (0.5 + lam * mu_min) ** 2))
    t2 = 8.0 * lam * proj_energy
    t3 = 4.0 * sigma**2 * n / ((1.0 + lam * mu_min) ** 2 * N)
    t4 = 2.0 * M**2 * N ** (-r)
    return float(t1 + t2 + t3 + t4)


def chernoff_deviation_bound(n: int, N: int, K: float, delta: float = 0.5) -> float:
    """``2 n exp(-N c_delta / K)`` bound on ``P(||L^T L - I|| > delta)``."""
    return float(2.0 * n * np.exp(-N * c_delta(delta) / K))
