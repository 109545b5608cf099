"""Banks of Kantorovich potentials against a reference measure.

A bank stores, for selected training measures ``mu_k``, the potential
``phi_k`` (paired with the ``mu`` side) and the scalar
``psi_bar_k = <psi_k, theta>``.  The bank evaluates the lower
approximant ``G(mu) = max_k <phi_k, mu> + psi_bar_k`` of the transport
cost to the reference, exact at the anchor measures by duality.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyBank
from .measures import DiscreteMeasure, MeasureDataset, ensure_same_ground
from .ot import exact_ot, wasserstein

_DUALITY_TOL = 1e-8


@dataclass(frozen=True)
class BankEntry:
    source_index: int
    phi: np.ndarray
    psi_bar: float
    wpp: float


class PotentialBank:
    """Reference measure plus a list of dual-potential entries."""

    def __init__(self, theta: DiscreteMeasure, entries: Sequence[BankEntry]):
        self.theta = theta
        self.ground = theta.ground
        self.entries = list(entries)
        self._refresh()

    def _refresh(self):
        if self.entries:
            self._A = np.array([e.phi for e in self.entries])
            self._b = np.array([e.psi_bar for e in self.entries])
        else:
            self._A = np.zeros((0, self.ground.size))
            self._b = np.zeros(0)

    def __len__(self):
        return len(self.entries)

    @property
    def indices(self) -> list:
        return [e.source_index for e in self.entries]

    def subset(self, positions: Sequence[int]) -> "PotentialBank":
        """Bank restricted to the given entry positions."""
        return PotentialBank(self.theta, [self.entries[i] for i in positions])

    def check_duality(self, dataset: MeasureDataset, tol: float = _DUALITY_TOL):
        """Verify ``<phi_k, mu_k> + psi_bar_k = wpp_k`` for every entry."""
        for e in self.entries:
            mu = dataset.train[e.source_index]
            gap = abs(float(e.phi @ mu.weights) + e.psi_bar - e.wpp)
            if gap > tol:
                raise AssertionError(
                    f"bank entry {e.source_index} violates duality by {gap:.3e}"
                )


def build_bank(dataset: MeasureDataset, theta: DiscreteMeasure, indices: Sequence[int]) -> PotentialBank:
    """Solve one exact transport problem per index and store the duals."""
    ensure_same_ground(dataset.ground, theta.ground)
    entries = []
    for k in indices:
        mu_k = dataset.train[int(k)]
        _, pot, wpp = exact_ot(theta, mu_k)
        psi_bar = float(pot.psi @ theta.weights)
        entry = BankEntry(source_index=int(k), phi=pot.phi, psi_bar=psi_bar, wpp=wpp)
        assert abs(float(pot.phi @ mu_k.weights) + psi_bar - wpp) <= _DUALITY_TOL
        entries.append(entry)
    return PotentialBank(theta, entries)


def eval_G(bank: PotentialBank, mu: DiscreteMeasure) -> float:
    """``max_k <phi_k, mu> + psi_bar_k``; raises on an empty bank."""
    if not bank.entries:
        raise EmptyBank("bank has no entries")
    ensure_same_ground(bank.ground, mu.ground)
    return float((bank._A @ mu.weights + bank._b).max())


def eval_G_many(bank: PotentialBank, weight_matrix: np.ndarray) -> np.ndarray:
    """Vectorized ``eval_G`` over stacked measure weights (N, m)."""
    if not bank.entries:
        raise EmptyBank("bank has no entries")
    return (weight_matrix @ bank._A.T + bank._b[None, :]).max(axis=1)


def select_cover_indices(
    dataset: MeasureDataset,
    theta: DiscreteMeasure,
    delta: float,
    distance_matrix: Optional[np.ndarray] = None,
) -> list:
    """Greedy subset of train indices whose delta-balls cover the train set.

    The first uncovered measure, in index order, becomes the next
    center, so the pass is deterministic; the result is near-minimal but
    not globally minimal.  Distances are exact W_p; pass a precomputed
    train-by-train matrix to avoid repeated solves.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    n = len(dataset.train)
    centers: list = []
    for i in range(n):
        covered = False
        for c in centers:
            d = (
                distance_matrix[i, c]
                if distance_matrix is not None
                else wasserstein(dataset.train[i], dataset.train[c])
            )
            if d <= delta:
                covered = True
                break
        if not covered:
            centers.append(i)
    return centers


def random_indices(n_train: int, j: int, seed: int) -> list:
    """``j`` distinct train indices drawn with a seeded RNG."""
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(n_train, size=min(j, n_train), replace=False).tolist())


def nested_random_schedule(n_train: int, sizes: Sequence[int], seed: int) -> dict:
    """Random index sets ``I_j`` with the hierarchical property.

    A single seeded permutation is truncated at each size, so
    ``I_j subset I_j'`` whenever ``j <= j'``.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_train)
    out = {}
    for j in sizes:
        if j > n_train:
            raise ValueError(f"schedule size {j} exceeds the train set")
        out[int(j)] = sorted(order[:j].tolist())
    return out


def export_affine(bank: PotentialBank):
    """Weight matrix and bias vector realizing ``eval_G`` as a max of
    affine forms: row i is ``phi_{k_i}`` along the ground ordering and
    ``b_i = psi_bar_{k_i}``."""
    if not bank.entries:
        raise EmptyBank("bank has no entries")
    return bank._A.copy(), bank._b.copy()


def reference_hash(theta: DiscreteMeasure) -> str:
    return hashlib.sha256(np.ascontiguousarray(theta.weights).tobytes()).hexdigest()[:12]


def write_bank(path, bank: PotentialBank) -> None:
    """Text bank file: header ``|I| d p ref_hash``, then per entry a
    ``k wpp psi_bar`` line followed by the phi vector line."""
    lines = [
        f"{len(bank)} {bank.ground.size} {bank.ground.p!r} {reference_hash(bank.theta)}"
    ]
    for e in bank.entries:
        lines.append(f"{e.source_index} {e.wpp!r} {e.psi_bar!r}")
        lines.append(" ".join(repr(float(v)) for v in e.phi))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_bank(path, theta: DiscreteMeasure) -> PotentialBank:
    """Read a bank file; the reference must hash to the stored value."""
    with open(path) as fh:
        header = fh.readline().split()
        count, d = int(header[0]), int(header[1])
        p = float(header[2])
        if header[3] != reference_hash(theta):
            raise ValueError("bank file was built against a different reference")
        if d != theta.ground.size or p != theta.ground.p:
            raise ValueError("bank file does not match the ground space")
        entries = []
        for _ in range(count):
            k, wpp, psi_bar = fh.readline().split()
            phi = np.array(fh.readline().split(), dtype=float)
            entries.append(
                BankEntry(
                    source_index=int(k), phi=phi, psi_bar=float(psi_bar), wpp=float(wpp)
                )
            )
    return PotentialBank(theta, entries)
