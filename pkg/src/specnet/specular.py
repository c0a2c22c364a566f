"""Mirrored tree autoencoder.

The encoder side is the pooled tree; the mirror holds one copy of every
non-root node hanging off the shared root with reversed edge direction.
Encoding walks levels deepest-first (children before parents), decoding walks
the mirror shallowest-first (parents before children), and each node is
updated exactly once per pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .backbone import Forest, PooledTree, depths_from_parent
from .errors import ShapeError
from .nn import leaky_relu, linear, segment_softmax


@dataclass
class SpecularGraph:
    parent: np.ndarray          # encoder-side parent map (global, -1 at roots)
    offsets: np.ndarray         # per-graph node ranges of the encoder side
    features: torch.Tensor      # encoder input rows; mirrored nodes start from these
    depth: np.ndarray = field(init=False)
    mirror_of: np.ndarray = field(init=False)  # encoder node -> mirror id (roots map to themselves)
    paired: np.ndarray = field(init=False)     # mirror id - N -> encoder node
    by_depth: list[np.ndarray] = field(init=False)
    position: np.ndarray = field(init=False)   # index of a node inside its depth block

    def __post_init__(self):
        n = len(self.parent)
        if self.features.shape[0] != n:
            raise ShapeError(f"{self.features.shape[0]} feature rows for {n} nodes")
        self.depth = depths_from_parent(self.parent)
        nonroot = np.nonzero(self.parent >= 0)[0]
        self.mirror_of = np.arange(n, dtype=np.int64)
        self.mirror_of[nonroot] = n + np.arange(len(nonroot))
        self.paired = nonroot
        max_depth = int(self.depth.max()) if n else -1
        order = np.argsort(self.depth, kind="stable")
        counts = np.bincount(self.depth, minlength=max_depth + 1) if n else np.zeros(0, dtype=np.int64)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        self.by_depth = [order[bounds[d]:bounds[d + 1]] for d in range(max_depth + 1)]
        self.position = np.empty(n, dtype=np.int64)
        for block in self.by_depth:
            self.position[block] = np.arange(len(block))

    @property
    def n(self) -> int:
        return len(self.parent)

    @property
    def roots(self) -> np.ndarray:
        return np.nonzero(self.parent < 0)[0]

    @property
    def num_nodes(self) -> int:
        return 2 * self.n - len(self.roots)

    @property
    def mir_nodes(self) -> np.ndarray:
        return self.n + np.arange(len(self.paired))

    def mirror_parent(self, u: int) -> int:
        v = int(self.paired[u - self.n])
        return int(self.mirror_of[self.parent[v]])

    def edges(self) -> list[tuple[int, int]]:
        """Directed edges: child -> parent on the encoder side, parent -> child on the mirror."""
        out = [(int(v), int(self.parent[v])) for v in self.paired]
        out += [(self.mirror_parent(int(u)), int(u)) for u in self.mir_nodes]
        return out

    @property
    def levels_enc(self) -> list[np.ndarray]:
        return list(reversed(self.by_depth))

    @property
    def levels_mir(self) -> list[np.ndarray]:
        return [self.mirror_of[block] for block in self.by_depth[1:]]


def build_mirror(pooled: PooledTree) -> SpecularGraph:
    return SpecularGraph(pooled.parent, pooled.offsets, pooled.features)


def build_mirror_from_forest(forest: Forest, features: torch.Tensor) -> SpecularGraph:
    return SpecularGraph(forest.parent, forest.offsets, features)


def encode(X: torch.Tensor, graph: SpecularGraph, W: torch.Tensor, b: torch.Tensor,
           act=leaky_relu, slope: float = 0.01, log: list | None = None) -> torch.Tensor:
    """Bottom-up pass; returns the updated state of every encoder-side node.

    A parent attends over its children's *updated* states with weights
    ``softmax(h_c . x_p)`` (``x_p`` is the parent's input row), averages the
    weighted rows, and updates from ``[message || x_p]``. Leaves receive a
    zero message.
    """
    if X.shape[0] != graph.n:
        raise ShapeError(f"{X.shape[0]} rows for {graph.n} encoder nodes")
    F = X.shape[1]
    levels = graph.by_depth
    states: list[torch.Tensor | None] = [None] * len(levels)
    for d in range(len(levels) - 1, -1, -1):
        nodes = levels[d]
        xp = X[torch.as_tensor(nodes)]
        msg = torch.zeros(len(nodes), F, dtype=X.dtype)
        if d + 1 < len(levels):
            kids = levels[d + 1]
            seg = torch.as_tensor(graph.position[graph.parent[kids]])
            hc = states[d + 1]
            xpar = xp[seg]
            w = segment_softmax((hc * xpar).sum(dim=1), seg, len(nodes))
            counts = torch.bincount(seg, minlength=len(nodes)).clamp(min=1).to(X.dtype)
            msg = msg.index_add(0, seg, w.unsqueeze(1) * hc) / counts.unsqueeze(1)
        states[d] = act(linear(torch.cat([msg, xp], dim=1), W, b), slope)
        if log is not None:
            log.append(nodes.copy())
    return _assemble(states, levels, graph.n, F, X.dtype)


def decode(graph: SpecularGraph, root_state: torch.Tensor, W: torch.Tensor, b: torch.Tensor,
           act=leaky_relu, slope: float = 0.01, log: list | None = None) -> torch.Tensor:
    """Top-down pass over the mirror; returns the reconstruction in encoder-node order.

    ``root_state`` holds the bottleneck row(s), one per root in ascending
    root order; roots are not re-updated and reappear unchanged in the output.
    """
    if root_state.dim() == 1:
        root_state = root_state.unsqueeze(0)
    levels = graph.by_depth
    if root_state.shape[0] != len(levels[0]):
        raise ShapeError(f"{root_state.shape[0]} root states for {len(levels[0])} roots")
    F = root_state.shape[1]
    X0 = graph.features
    states: list[torch.Tensor | None] = [root_state] + [None] * (len(levels) - 1)
    for d in range(1, len(levels)):
        nodes = levels[d]
        hp = states[d - 1][torch.as_tensor(graph.position[graph.parent[nodes]])]
        x0 = X0[torch.as_tensor(nodes)]
        states[d] = act(linear(torch.cat([hp, x0], dim=1), W, b), slope)
        if log is not None:
            log.append(graph.mirror_of[nodes])
    return _assemble(states, levels, graph.n, F, root_state.dtype)


def _assemble(states, levels, n: int, F: int, dtype) -> torch.Tensor:
    if n == 0:
        return torch.zeros(0, F, dtype=dtype)
    order = np.concatenate(levels)
    inverse = np.empty(n, dtype=np.int64)
    inverse[order] = np.arange(n)
    return torch.cat(states, dim=0)[torch.as_tensor(inverse)]


def reconstruction_error(X: torch.Tensor, X_hat: torch.Tensor):
    """(E, eps, delta): squared errors, their mean, and the per-feature mean over nodes."""
    if X.shape != X_hat.shape or X.dim() != 2:
        raise ShapeError(f"cannot compare {tuple(X.shape)} with {tuple(X_hat.shape)}")
    E = (X - X_hat) ** 2
    return E, E.mean(), E.mean(dim=0)


def forest_errors(X: torch.Tensor, X_hat: torch.Tensor, graph: SpecularGraph, root_in_error: bool = True):
    """Per-graph ``eps`` (B,) and ``delta`` (B, F) for a batched reconstruction."""
    if X.shape != X_hat.shape:
        raise ShapeError(f"cannot compare {tuple(X.shape)} with {tuple(X_hat.shape)}")
    E = (X - X_hat) ** 2
    B = len(graph.offsets) - 1
    gid = np.repeat(np.arange(B), np.diff(graph.offsets))
    weight = np.ones(graph.n)
    if not root_in_error:
        sizes = np.diff(graph.offsets)
        # single-node graphs keep their root so the error stays defined
        weight[graph.offsets[:-1][sizes > 1]] = 0.0
    w = torch.as_tensor(weight, dtype=X.dtype)
    g = torch.as_tensor(gid)
    counts = torch.zeros(B, dtype=X.dtype).index_add(0, g, w)
    delta = torch.zeros(B, X.shape[1], dtype=X.dtype).index_add(0, g, E * w.unsqueeze(1)) / counts.unsqueeze(1)
    eps = delta.mean(dim=1)
    return eps, delta
