"""Directed interaction graph over the target (node 0) and n robots.

An edge ``{j, i}`` means robot ``i`` reads node ``j``; it is encoded as
``W[i, j] > 0``.  Row 0 belongs to the target, which reads nobody.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class TopologyError(ValueError):
    """Base class for invalid adjacency matrices."""


class NonSquare(TopologyError):
    pass


class NegativeWeight(TopologyError):
    pass


class NonzeroDiagonal(TopologyError):
    pass


class IsolatedNode(TopologyError):
    """Some robot has zero in-weight, so the degree matrix is singular."""


class TargetHasInputs(TopologyError):
    """Row 0 is nonzero; the target must be the autonomous root."""


class EigenFailure(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Topology:
    W: np.ndarray
    n: int = field(init=False)
    zeta: np.ndarray = field(init=False)
    What: np.ndarray = field(init=False)
    varpi: np.ndarray = field(init=False)
    B: np.ndarray = field(init=False)
    D: np.ndarray = field(init=False)

    def __post_init__(self):
        W = self.W
        n = W.shape[0] - 1
        zeta = W[1:, 0].copy()
        What = W[1:, 1:].copy()
        varpi = zeta + What.sum(axis=1)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "What", What)
        object.__setattr__(self, "varpi", varpi)
        object.__setattr__(self, "B", np.diag(varpi))
        object.__setattr__(self, "D", What / varpi[:, None])
        for arr in (W, zeta, What, varpi, self.B, self.D):
            arr.setflags(write=False)

    def adjacency(self) -> np.ndarray:
        """Reassemble ``W = [0 0; zeta What]``."""
        W = np.zeros((self.n + 1, self.n + 1))
        W[1:, 0] = self.zeta
        W[1:, 1:] = self.What
        return W


def build_topology(W) -> Topology:
    W = np.array(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise NonSquare(f"adjacency must be square, got shape {W.shape}")
    if W.shape[0] < 2:
        raise NonSquare("adjacency needs the target plus at least one robot")
    if not np.all(np.isfinite(W)):
        raise NegativeWeight("adjacency has non-finite entries")
    if np.any(W < 0):
        i, j = np.argwhere(W < 0)[0]
        raise NegativeWeight(f"W[{i}][{j}] = {W[i, j]} < 0")
    if np.any(np.diag(W) != 0):
        i = int(np.flatnonzero(np.diag(W))[0])
        raise NonzeroDiagonal(f"W[{i}][{i}] = {W[i, i]} must be 0")
    if np.any(W[0] != 0):
        raise TargetHasInputs("row 0 (the target) must be all zeros")
    varpi = W[1:].sum(axis=1)
    if np.any(varpi == 0):
        i = int(np.flatnonzero(varpi == 0)[0]) + 1
        raise IsolatedNode(f"robot {i} has no in-neighbours (varpi_{i} = 0)")
    return Topology(W)


def topology_from_parts(zeta, What) -> Topology:
    zeta = np.asarray(zeta, dtype=float)
    What = np.asarray(What, dtype=float)
    n = zeta.shape[0]
    W = np.zeros((n + 1, n + 1))
    W[1:, 0] = zeta
    W[1:, 1:] = What
    return build_topology(W)


def has_spanning_tree(t: Topology) -> bool:
    """True iff node 0 reaches every robot along information-flow edges."""
    # information flows j -> i whenever W[i, j] > 0
    seen = np.zeros(t.n + 1, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(t.W[:, j] > 0):
            if not seen[i]:
                seen[i] = True
                queue.append(i)
    return bool(seen.all())


def spectrum_D(t: Topology) -> np.ndarray:
    """All n eigenvalues of D (complex, with multiplicity)."""
    try:
        s = np.linalg.eigvals(t.D)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    return s.astype(complex)


def paper_topology() -> Topology:
    """The six-robot graph used throughout the numerical examples."""
    zeta = [0, 0, 1, 0, 0, 0]
    What = [
        [0, 1, 1, 0, 0, 0],
        [1, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0],
        [1, 0, 1, 0, 0, 0],
        [0, 1, 1, 1, 0, 0],
        [0, 0, 1, 0, 0, 0],
    ]
    return topology_from_parts(zeta, What)


def random_topology(n: int, rng: np.random.Generator, edge_prob: float = 0.3,
                    w_range=(0.0, 2.0), spanning: bool = True) -> Topology:
    """Random weighted digraph; with ``spanning`` it has a tree rooted at 0.

    Weights are drawn from the half-open interval (lo, hi].
    """
    lo, hi = w_range
    W = np.zeros((n + 1, n + 1))

    def weight():
        return hi - (hi - lo) * rng.random()

    order = rng.permutation(np.arange(1, n + 1))
    if spanning:
        placed = [0]
        for i in order:
            parent = placed[rng.integers(len(placed))]
            W[i, parent] = weight()
            placed.append(int(i))
    mask = rng.random((n, n)) < edge_prob
    np.fill_diagonal(mask, False)
    for i, j in np.argwhere(mask):
        W[i + 1, j + 1] = weight()
    if not spanning:
        # keep every robot non-isolated without guaranteeing reachability
        for i in range(1, n + 1):
            if W[i].sum() == 0:
                j = i
                while j == i:
                    j = int(rng.integers(1, n + 1)) if n > 1 else 0
                W[i, j] = weight()
    return build_topology(W)
