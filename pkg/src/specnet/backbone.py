"""Graph-convolution refinement, root-preserving top-k pooling, and ancestor re-wiring.

All functions work on *forests*: a batch is the disjoint union of pre-ordered
trees laid out contiguously, so one call processes many samples without any
cross-sample coupling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .dom import DomTree
from .errors import ShapeError
from .nn import kaiming_uniform, leaky_relu, linear


@dataclass
class Forest:
    """Disjoint union of pre-ordered trees; ``parent`` uses global indices, -1 for roots."""

    parent: np.ndarray
    offsets: np.ndarray  # graph g owns nodes offsets[g]:offsets[g+1]

    @classmethod
    def from_trees(cls, trees: Sequence[DomTree]) -> "Forest":
        sizes = np.array([len(t) for t in trees], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        parent = np.concatenate([
            np.where(t.parent_array >= 0, t.parent_array + off, -1) for t, off in zip(trees, offsets[:-1])
        ]) if len(trees) else np.zeros(0, dtype=np.int64)
        return cls(parent.astype(np.int64), offsets.astype(np.int64))

    @classmethod
    def from_parent(cls, parent: Sequence[int]) -> "Forest":
        parent = np.asarray(parent, dtype=np.int64)
        return cls(parent, np.array([0, len(parent)], dtype=np.int64))

    @property
    def n(self) -> int:
        return len(self.parent)

    @property
    def n_graphs(self) -> int:
        return len(self.offsets) - 1

    @property
    def graph_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_graphs), np.diff(self.offsets))

    @property
    def roots(self) -> np.ndarray:
        return self.offsets[:-1]

    def depth(self) -> np.ndarray:
        return depths_from_parent(self.parent)


def depths_from_parent(parent: np.ndarray) -> np.ndarray:
    depth = np.zeros(len(parent), dtype=np.int64)
    for v, p in enumerate(parent.tolist()):
        if p >= 0:
            depth[v] = depth[p] + 1
    return depth


# ---------------------------------------------------------------------------
# GCN


def gcn_edges(forest: Forest, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(src, dst, weight) of the symmetrically normalized adjacency with self-loops."""
    child = np.nonzero(forest.parent >= 0)[0]
    par = forest.parent[child]
    loops = np.arange(forest.n)
    src = np.concatenate([loops, child, par])
    dst = np.concatenate([loops, par, child])
    deg = np.bincount(dst, minlength=forest.n).astype(np.float64)
    w = 1.0 / np.sqrt(deg[src] * deg[dst])
    return torch.as_tensor(src), torch.as_tensor(dst), torch.as_tensor(w, dtype=dtype)


def gcn_layer(X: torch.Tensor, edges, W: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    src, dst, w = edges
    H = linear(X, W)
    out = torch.zeros(X.shape[0], W.shape[0], dtype=H.dtype).index_add(0, dst, H[src] * w.unsqueeze(1))
    return out + b


class GCNStack(nn.Module):
    def __init__(self, dims: Sequence[int] = (32, 64, 64, 32), slope: float = 0.01,
                 gen: torch.Generator | None = None, act=leaky_relu):
        super().__init__()
        gen = gen or torch.Generator().manual_seed(0)
        self.slope = slope
        self.act = act
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        for a, b in zip(dims[:-1], dims[1:]):
            self.weights.append(nn.Parameter(kaiming_uniform((b, a), a, gen, slope).float()))
            self.biases.append(nn.Parameter(torch.zeros(b)))

    def forward(self, X: torch.Tensor, forest: Forest) -> torch.Tensor:
        if X.shape[0] != forest.n:
            raise ShapeError(f"{X.shape[0]} feature rows for {forest.n} nodes")
        edges = gcn_edges(forest, X.dtype)
        for W, b in zip(self.weights, self.biases):
            X = self.act(gcn_layer(X, edges, W, b), self.slope)
        return X


def gcn_stack(X: torch.Tensor, tree: DomTree, params: GCNStack) -> torch.Tensor:
    return params(X, Forest.from_trees([tree]))


# ---------------------------------------------------------------------------
# pooling


def keep_count(n: int, ratio: float) -> int:
    return max(1, math.ceil(ratio * n - 1e-9))


def topk_select(scores: np.ndarray, forest: Forest, ratio: float) -> np.ndarray:
    """Sorted global indices kept per graph: top-k by score, ties to lower index, root forced in."""
    if not 0 < ratio <= 1:
        raise ValueError(f"pool ratio must be in (0, 1], got {ratio}")
    kept = []
    for g in range(forest.n_graphs):
        lo, hi = int(forest.offsets[g]), int(forest.offsets[g + 1])
        k = keep_count(hi - lo, ratio)
        order = np.argsort(-scores[lo:hi], kind="stable")[:k]
        if 0 not in order:
            order[-1] = 0
        kept.append(np.sort(order) + lo)
    return np.concatenate(kept) if kept else np.zeros(0, dtype=np.int64)


def pool_scores(X: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    return linear(X, p.unsqueeze(0)).squeeze(1) / p.norm()


def restore_parents(parent: np.ndarray, kept: np.ndarray) -> np.ndarray:
    """Parent map over ``kept`` (in kept-index space): nearest kept proper ancestor."""
    mask = np.zeros(len(parent), dtype=bool)
    mask[kept] = True
    nearest = np.full(len(parent), -1, dtype=np.int64)
    for v, p in enumerate(parent.tolist()):
        if p >= 0:
            nearest[v] = p if mask[p] else nearest[p]
    new_index = np.full(len(parent), -1, dtype=np.int64)
    new_index[kept] = np.arange(len(kept))
    anc = nearest[kept]
    return np.where(anc >= 0, new_index[np.maximum(anc, 0)], -1)


@dataclass
class PooledTree:
    kept: np.ndarray                 # original node indices, ascending
    features: torch.Tensor           # gated rows for kept nodes
    source_parent: np.ndarray        # parent map of the unpooled tree/forest
    source_offsets: np.ndarray
    parent: np.ndarray | None = None  # restored map in kept-index space
    depth: np.ndarray | None = None

    @property
    def origin_map(self) -> dict[int, int]:
        return {i: int(v) for i, v in enumerate(self.kept)}

    @property
    def offsets(self) -> np.ndarray:
        return np.searchsorted(self.kept, self.source_offsets)

    def forest(self) -> Forest:
        if self.parent is None:
            raise ValueError("connectivity has not been restored")
        return Forest(self.parent, self.offsets)


def topk_pool_forest(X: torch.Tensor, forest: Forest, ratio: float, p: torch.Tensor) -> PooledTree:
    scores = pool_scores(X, p)
    kept = topk_select(scores.detach().cpu().numpy(), forest, ratio)
    idx = torch.as_tensor(kept)
    gated = X[idx] * torch.tanh(scores[idx]).unsqueeze(1)
    return PooledTree(kept, gated, forest.parent, forest.offsets)


def topk_pool(X: torch.Tensor, tree: DomTree, ratio: float, p: torch.Tensor) -> PooledTree:
    return topk_pool_forest(X, Forest.from_trees([tree]), ratio, p)


def restore_connectivity(pre: PooledTree) -> PooledTree:
    parent = restore_parents(pre.source_parent, pre.kept)
    return PooledTree(pre.kept, pre.features, pre.source_parent, pre.source_offsets,
                      parent, depths_from_parent(parent))
