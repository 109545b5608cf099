"""Adversarial training for the empirical Euler-Lagrange saddle point.

A solution network and an adversary network, both cylinder functions
realized as affine-head ReLU networks, play the normalized weak-form
residual

    [ <F - y, H> + lam * pce(F, H) ] / |H|,

where the inner products are empirical means over the batch, ``pce`` is
the pre-Cheeger pairing of the two gradient fields, and the norm is
either the discrete Sobolev norm (value plus field energy) or the plain
L2 norm.  Both losses are homogeneous of degree zero in the adversary's
output scale.  Gradients are taken through the denominator as well.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cylinder import gradient_operators
from .errors import DegenerateAdversary, Diverged
from .measures import GroundSpace
from .nets import Adam, ReluNetwork, backward, cylinder_field_batch, mean_relative_error

_NORM_FLOOR = 1e-8


@dataclass
class SaddleState:
    """Solution net, adversary net, and the saddle-point parameters."""

    f_net: ReluNetwork
    h_net: ReluNetwork
    lam: float = 0.0
    n_xi: int = 1
    n_theta: int = 1
    norm: str = "h12"  # "h12" or "l2"

    def __post_init__(self):
        if self.f_net.input_dim != self.h_net.input_dim:
            raise ValueError("solution and adversary nets must share the input dimension")
        if self.n_xi < 1 or self.n_theta < 1:
            raise ValueError("both inner step counts must be at least 1")
        if self.norm not in ("h12", "l2"):
            raise ValueError(f"unknown norm mode {self.norm!r}")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")


def _terms(state: SaddleState, ground: GroundSpace, X, y):
    """All forward quantities of both nets on a batch."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    B = len(y)
    yF, cF, SF, RF, fF = cylinder_field_batch(state.f_net, ground, X)
    yH, cH, SH, RH, fH = cylinder_field_batch(state.h_net, ground, X)
    num_data = float(np.dot(yF - y, yH)) / B
    num_pce = state.lam * float(np.einsum("bmd,bmd,bm->", fF, fH, X)) / B
    q = float(np.dot(yH, yH)) / B
    if state.norm == "h12":
        q += float(np.einsum("bmd,bmd,bm->", fH, fH, X)) / B
    return {
        "X": X,
        "y": y,
        "B": B,
        "yF": yF,
        "cF": cF,
        "SF": SF,
        "RF": RF,
        "fF": fF,
        "yH": yH,
        "cH": cH,
        "SH": SH,
        "RH": RH,
        "fH": fH,
        "num": num_data + num_pce,
        "q": q,
    }


def _denominator(terms) -> float:
    den = float(np.sqrt(terms["q"]))
    if den < _NORM_FLOOR:
        raise DegenerateAdversary(
            f"adversary batch norm {den:.3e} below floor {_NORM_FLOOR}"
        )
    return den


def loss_adversary(state: SaddleState, ground: GroundSpace, X, y) -> float:
    """Negated normalized residual (the adversary minimizes this)."""
    t = _terms(state, ground, X, y)
    return -t["num"] / _denominator(t)


def loss_solution(state: SaddleState, ground: GroundSpace, X, y) -> float:
    """Normalized residual (the solution net minimizes this)."""
    t = _terms(state, ground, X, y)
    return t["num"] / _denominator(t)


def _pce_seed_pair(field_other, R_self, X):
    """Sensitivity seeds of the pre-Cheeger pairing w.r.t. one net."""
    return np.einsum("bmd,imd,bm->bi", field_other, R_self, X)


def _pce_direct_W0(S_self, field_other, X, ops):
    """Direct first-layer-weight gradient of the pairing through the
    finite-difference row fields."""
    coef = np.einsum("bi,bm,bmd->imd", S_self, X, field_other)
    out = np.zeros((S_self.shape[1], X.shape[1]))
    for ax, op in enumerate(ops):
        out += coef[:, :, ax] @ op
    return out


def solution_step_grads(state: SaddleState, ground: GroundSpace, X, y):
    """Gradient of the solution loss w.r.t. the solution net parameters.

    The denominator does not depend on the solution net, so this is the
    numerator gradient scaled by ``1/|H|``.
    """
    t = _terms(state, ground, X, y)
    den = _denominator(t)
    B = t["B"]
    value_seeds = t["yH"] / (B * den)
    grads = None
    if state.lam > 0.0:
        sgrad = state.lam / (B * den) * _pce_seed_pair(t["fH"], t["RF"], t["X"])
        grads = backward(state.f_net, t["cF"], value_seeds, sgrad)
        if state.f_net.layers[0].train_W:
            grads[(0, "W")] += (
                state.lam
                / (B * den)
                * _pce_direct_W0(t["SF"], t["fH"], t["X"], gradient_operators(ground))
            )
    else:
        grads = backward(state.f_net, t["cF"], value_seeds)
    return grads, t["num"] / den


def adversary_step_grads(state: SaddleState, ground: GroundSpace, X, y):
    """Gradient of the adversary loss w.r.t. the adversary parameters.

    Differentiates through the denominator: for ``L = -num / den`` the
    seeds combine as ``-(d num)/den + num (d q) / (2 den^3)``.
    """
    t = _terms(state, ground, X, y)
    den = _denominator(t)
    B, X_, lam = t["B"], t["X"], state.lam
    ops = gradient_operators(ground)
    c_num = -1.0 / den
    c_q = t["num"] / (2.0 * den**3)

    value_seeds = c_num * (t["yF"] - t["y"]) / B + c_q * 2.0 * t["yH"] / B
    sgrad = None
    direct = None
    if lam > 0.0:
        sgrad = c_num * lam / B * _pce_seed_pair(t["fF"], t["RH"], X_)
        direct = c_num * lam / B * _pce_direct_W0(t["SH"], t["fF"], X_, ops)
    if state.norm == "h12":
        extra = c_q * 2.0 / B * _pce_seed_pair(t["fH"], t["RH"], X_)
        sgrad = extra if sgrad is None else sgrad + extra
        extra_direct = c_q * 2.0 / B * _pce_direct_W0(t["SH"], t["fH"], X_, ops)
        direct = extra_direct if direct is None else direct + extra_direct

    grads = backward(state.h_net, t["cH"], value_seeds, sgrad)
    if direct is not None and state.h_net.layers[0].train_W:
        grads[(0, "W")] += direct
    return grads, -t["num"] / den


@dataclass
class AdversarialConfig:
    """Outer-loop hyperparameters; ``batch_size=None`` means full batch.

    The adversary may run at its own learning rate: the inner supremum
    should track faster than the outer descent moves.
    """

    epochs: int = 100
    lr: float = 1e-3
    lr_xi: Optional[float] = None
    batch_size: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("epochs and learning rate must be positive")
        if self.lr_xi is None:
            self.lr_xi = self.lr


def run_algorithm1(
    state: SaddleState,
    X: np.ndarray,
    y: np.ndarray,
    ground: GroundSpace,
    config: AdversarialConfig,
    X_test: Optional[np.ndarray] = None,
    y_test: Optional[np.ndarray] = None,
) -> list:
    """Alternating optimization: per batch, ``n_xi`` adversary steps then
    ``n_theta`` solution steps, repeated for the epoch budget.

    Degenerate-adversary batches skip the step and are counted in the
    epoch record.  Returns one record per epoch with both losses and the
    mean relative error of the solution net.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = len(y)
    batch = n if config.batch_size is None else min(config.batch_size, n)
    rng = np.random.default_rng(config.seed)
    opt_h = Adam(state.h_net, lr=config.lr_xi)
    opt_f = Adam(state.f_net, lr=config.lr)

    def record(epoch, skipped):
        try:
            sol = loss_solution(state, ground, X, y)
        except DegenerateAdversary:
            sol = float("nan")
        rec = {
            "epoch": epoch,
            "solution_loss": sol,
            "adversary_loss": -sol,
            "train_rel_err": mean_relative_error(state.f_net.forward(X), y),
            "skipped_steps": skipped,
        }
        if X_test is not None:
            rec["test_rel_err"] = mean_relative_error(
                state.f_net.forward(X_test), y_test
            )
        return rec

    trace = [record(0, 0)]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        skipped = 0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            Xb, yb = X[idx], y[idx]
            for _ in range(state.n_xi):
                try:
                    grads, loss = adversary_step_grads(state, ground, Xb, yb)
                except DegenerateAdversary:
                    skipped += 1
                    continue
                if not np.isfinite(loss):
                    raise Diverged(f"adversary loss non-finite at epoch {epoch}")
                opt_h.step({k: v for k, v in grads.items() if k != "S"})
            for _ in range(state.n_theta):
                try:
                    grads, loss = solution_step_grads(state, ground, Xb, yb)
                except DegenerateAdversary:
                    skipped += 1
                    continue
                if not np.isfinite(loss):
                    raise Diverged(f"solution loss non-finite at epoch {epoch}")
                opt_f.step({k: v for k, v in grads.items() if k != "S"})
        trace.append(record(epoch, skipped))
    return trace
