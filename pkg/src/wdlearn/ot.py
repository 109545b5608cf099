"""Exact discrete optimal transport, entropic solver, and c-transform.

The exact solver poses the Kantorovich problem restricted to the support
atoms as a linear program and reads the dual variables back as
Kantorovich potentials.  Potentials are extended to zero-weight atoms by
c-transform so that they are defined (and feasible) on the whole ground
space, then gauged so that ``psi`` vanishes at the first ground point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import logsumexp

from .errors import NotConverged, SolverFailure
from .measures import DiscreteMeasure, GroundSpace, ensure_same_ground

_FEAS_TOL = 1e-9
_MARGINAL_TOL = 1e-9


@dataclass(frozen=True)
class TransportPlan:
    """Coupling matrix between two measures with its transport cost."""

    matrix: np.ndarray
    cost: float

    def check_marginals(self, mu_w: np.ndarray, nu_w: np.ndarray, tol: float = _MARGINAL_TOL):
        row = np.abs(self.matrix.sum(axis=1) - mu_w).max()
        col = np.abs(self.matrix.sum(axis=0) - nu_w).max()
        if max(row, col) > tol:
            raise SolverFailure(f"plan marginals violated by {max(row, col):.3e}")


@dataclass(frozen=True)
class PotentialPair:
    """Kantorovich potentials for a measure pair.

    ``psi`` is paired with the first measure of the solve and ``phi``
    with the second, so ``dual_value = <phi, nu> + <psi, mu>`` and
    ``phi(y) + psi(x) <= d(x, y)^p`` for all ground points.  ``psi`` is
    gauged to vanish at the first ground point.
    """

    phi: np.ndarray
    psi: np.ndarray
    dual_value: float


def solve_transport_lp(cost: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Solve ``min <cost, gamma>`` over couplings of ``a`` and ``b``.

    The LP is restricted to support atoms; the returned plan is embedded
    back into the full index set and the duals are reported on the
    supports only.

    Returns
    -------
    gamma : (m, n) ndarray
    value : float
    (ia, u) : support indices of ``a`` and their dual values
    (ib, v) : support indices of ``b`` and their dual values
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ia = np.flatnonzero(a > 0.0)
    ib = np.flatnonzero(b > 0.0)
    Cs = np.ascontiguousarray(cost[np.ix_(ia, ib)])
    ma, mb = len(ia), len(ib)

    rows = np.concatenate([np.repeat(np.arange(ma), mb), ma + np.tile(np.arange(mb), ma)])
    cols = np.tile(np.arange(ma * mb), 2)
    A_eq = sparse.coo_matrix((np.ones(2 * ma * mb), (rows, cols)), shape=(ma + mb, ma * mb)).tocsr()
    b_eq = np.concatenate([a[ia], b[ib]])

    # dual simplex returns an exact basic solution (marginals at machine
    # precision); the automatic choice may fall back to interior point on
    # larger instances and miss the 1e-10 marginal requirement
    res = linprog(
        Cs.ravel(),
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
        },
    )
    if res.status != 0:
        raise SolverFailure(f"transport LP failed: {res.message}")

    gamma = np.zeros_like(cost, dtype=float)
    gamma[np.ix_(ia, ib)] = res.x.reshape(ma, mb)
    duals = res.eqlin.marginals
    return gamma, float(res.fun), (ia, duals[:ma]), (ib, duals[ma:])


def _extend_potentials(cost, supp_b, v_supp):
    """C-transform extension of LP duals to every ground point.

    ``psi(x) = min_{y in supp b} cost[x, y] - v(y)`` and
    ``phi(y) = min_x cost[x, y] - psi(x)``; the pair is feasible on the
    whole ground space and attains the same dual value.
    """
    psi = (cost[:, supp_b] - v_supp[None, :]).min(axis=1)
    phi = (cost - psi[:, None]).min(axis=0)
    return phi, psi


def exact_ot(mu: DiscreteMeasure, nu: DiscreteMeasure, p: Optional[float] = None):
    """Exact optimal transport between two measures.

    Parameters
    ----------
    mu, nu : DiscreteMeasure
        Measures on a shared ground space.
    p : float, optional
        Cost exponent; defaults to the ground space's metric order.

    Returns
    -------
    plan : TransportPlan
    potentials : PotentialPair
        ``phi`` paired with ``nu``, ``psi`` with ``mu``; ``psi[0] = 0``.
    wpp : float
        ``W_p^p(mu, nu)``.
    """
    ensure_same_ground(mu.ground, nu.ground)
    cost = mu.ground.cost_matrix(p)
    gamma, wpp, (_, _), (ib, v) = solve_transport_lp(cost, mu.weights, nu.weights)

    phi, psi = _extend_potentials(cost, ib, v)
    shift = psi[0]
    psi = psi - shift
    phi = phi + shift

    dual_value = float(np.dot(phi, nu.weights) + np.dot(psi, mu.weights))
    if abs(dual_value - wpp) > _FEAS_TOL * (1.0 + abs(wpp)):
        raise SolverFailure(
            f"primal-dual gap {abs(dual_value - wpp):.3e} exceeds tolerance"
        )
    feas = (phi[None, :] + psi[:, None] - cost).max()
    if feas > _FEAS_TOL:
        raise SolverFailure(f"dual feasibility violated by {feas:.3e}")

    plan = TransportPlan(matrix=gamma, cost=wpp)
    plan.check_marginals(mu.weights, nu.weights)
    return plan, PotentialPair(phi=phi, psi=psi, dual_value=dual_value), wpp


def wasserstein(mu: DiscreteMeasure, nu: DiscreteMeasure, p: Optional[float] = None) -> float:
    """``W_p(mu, nu)`` via the exact solver."""
    p_eff = mu.ground.p if p is None else float(p)
    _, _, wpp = exact_ot(mu, nu, p)
    # a degenerate basic solution may report a cost of -1e-18; the root
    # must not turn that into a NaN
    return float(max(wpp, 0.0) ** (1.0 / p_eff))


def pairwise_wasserstein(measures: Sequence[DiscreteMeasure], p: Optional[float] = None) -> np.ndarray:
    """Symmetric matrix of ``W_p`` distances between the given measures."""
    n = len(measures)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = wasserstein(measures[i], measures[j], p)
    return D


def sinkhorn(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    p: Optional[float] = None,
    reg: float = 0.1,
    tol: float = 1e-9,
    max_iter: int = 10000,
):
    """Entropic-regularized transport via log-domain Sinkhorn iterations.

    Returns the regularized plan once the worst marginal violation drops
    below ``tol``, together with its unregularized cost ``sum d^p gamma``.

    Raises
    ------
    NotConverged
        If ``max_iter`` is reached first; carries the final violation.
    """
    ensure_same_ground(mu.ground, nu.ground)
    if reg <= 0:
        raise ValueError("reg must be positive")
    cost = mu.ground.cost_matrix(p)
    ia = np.flatnonzero(mu.weights > 0)
    ib = np.flatnonzero(nu.weights > 0)
    a = mu.weights[ia]
    b = nu.weights[ib]
    C = cost[np.ix_(ia, ib)]
    la, lb = np.log(a), np.log(b)

    f = np.zeros(len(ia))
    g = np.zeros(len(ib))
    violation = np.inf
    for _ in range(max_iter):
        f = reg * (la - logsumexp((g[None, :] - C) / reg, axis=1))
        g = reg * (lb - logsumexp((f[:, None] - C) / reg, axis=0))
        plan = np.exp((f[:, None] + g[None, :] - C) / reg)
        violation = max(
            np.abs(plan.sum(axis=1) - a).max(), np.abs(plan.sum(axis=0) - b).max()
        )
        if violation < tol:
            break
    else:
        raise NotConverged(
            f"sinkhorn stopped after {max_iter} iterations", violation
        )

    gamma = np.zeros_like(cost)
    gamma[np.ix_(ia, ib)] = plan
    approx_wpp = float((gamma * cost).sum())
    return TransportPlan(matrix=gamma, cost=approx_wpp), approx_wpp


def c_transform(f, ground: GroundSpace, p: Optional[float] = None) -> np.ndarray:
    """``f^c(x) = min_y d(x, y)^p - f(y)``, computed by enumeration."""
    f = np.asarray(f, dtype=float)
    if f.shape[0] != ground.size:
        raise ValueError("f must be a vector over the ground points")
    return (ground.cost_matrix(p) - f[None, :]).min(axis=1)
