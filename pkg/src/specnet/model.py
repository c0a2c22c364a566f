"""The full detector: features -> layer norm -> GCN -> top-k pooling -> mirrored autoencoder -> two heads.

A batch is a disjoint union of trees. Every stage is either row-wise or
confined to edges inside one tree, so a batched forward pass computes the
same per-sample values as separate passes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .backbone import Forest, GCNStack, restore_connectivity, topk_pool_forest
from .classifier import (
    ErrorMLP,
    loss_classification,
    loss_reconstruction,
    multitask_loss,
    prob_threshold,
)
from .config import TrainConfig
from .dom import DomTree, NodeKind, RawPage, attach_domain_node, parse_html
from .embeddings import DomainEncoder, EmbeddingTable, TokenVocabulary, domain_to_indices
from .nn import activation, kaiming_uniform, layer_norm
from .specular import build_mirror, decode, encode, forest_errors

# which probability decides for each variant
DECIDER = {
    "none": "ensemble",
    "no_cls_loss": "prob1",
    "no_rec_loss": "prob2",
    "no_decoder": "prob2",
    "no_ae": "prob2",
    "no_gnn": "ensemble",
    "no_domain": "ensemble",
}


@dataclass
class Sample:
    """A parsed page reduced to what the network reads."""

    parent: np.ndarray       # pre-order parent indices, -1 at the root
    rows: np.ndarray         # embedding-table row per node (0 for the domain node)
    domain_row: int          # node index of the domain node, -1 when absent
    domain_chars: list[int]
    label: int | None        # external convention
    source: str = ""

    @property
    def n(self) -> int:
        return len(self.parent)


def tree_to_sample(tree: DomTree, vocab: TokenVocabulary, label: int | None = None, source: str = "") -> Sample:
    rows = np.zeros(len(tree), dtype=np.int64)
    domain_row, chars = -1, []
    for i, (kind, token) in enumerate(zip(tree.kinds, tree.tokens)):
        if kind is NodeKind.DOMAIN:
            domain_row = i
            chars = domain_to_indices(token)
        else:
            rows[i] = vocab.index(token, kind)
    return Sample(tree.parent_array.astype(np.int64), rows, domain_row, chars, label, source)


def page_tree(page: RawPage, use_domain: bool, max_nodes: int) -> DomTree:
    tree = parse_html(page.html, max_nodes=max_nodes)
    return attach_domain_node(tree, page.domain) if use_domain else tree


@dataclass
class Output:
    eps: torch.Tensor      # (B,) reconstruction error; zeros for variants without a decoder
    delta: torch.Tensor    # (B, F) per-feature error summary (or the MLP input for headless variants)
    prob1: torch.Tensor    # (B,) threshold probability, benign-oriented
    prob2: torch.Tensor    # (B,) MLP probability, benign-oriented
    n_nodes: list[int]


class SpecularNet(nn.Module):
    def __init__(self, config: TrainConfig, table: EmbeddingTable):
        super().__init__()
        if table.dim != config.feature_dim:
            raise ValueError(f"embedding width {table.dim} differs from feature_dim {config.feature_dim}")
        self.config = config
        self.vocab = table.vocab
        F = config.feature_dim
        gen = torch.Generator().manual_seed(config.seed)
        slope = config.leaky_slope
        self.act = activation(config.activation)
        self.register_buffer("table", torch.as_tensor(np.asarray(table.vectors, dtype=np.float32)))
        self.domain_encoder = (DomainEncoder(F, config.lstm_layers, F, gen) if config.domain_enabled else None)
        self.ln_gamma = nn.Parameter(torch.ones(F))
        self.ln_beta = nn.Parameter(torch.zeros(F))
        self.gcn = GCNStack(config.gcn_dims, slope, gen, self.act) if config.ablation != "no_gnn" else None
        self.pool_p = nn.Parameter(kaiming_uniform((F,), F, gen, slope).float())
        self.enc_W = nn.Parameter(kaiming_uniform((F, 2 * F), 2 * F, gen, slope).float())
        self.enc_b = nn.Parameter(torch.zeros(F))
        self.dec_W = nn.Parameter(kaiming_uniform((F, 2 * F), 2 * F, gen, slope).float())
        self.dec_b = nn.Parameter(torch.zeros(F))
        self.mlp = ErrorMLP(F, config.mlp_hidden, slope, gen, self.act)
        self.w1 = nn.Parameter(torch.zeros(()))
        self.w2 = nn.Parameter(torch.zeros(()))
        self.register_buffer("tau", torch.zeros(()))
        self.register_buffer("beta", torch.tensor(config.effective_beta))

    @property
    def variant(self) -> str:
        return self.config.ablation

    @property
    def uses_threshold(self) -> bool:
        return DECIDER[self.variant] in ("ensemble", "prob1")

    # ------------------------------------------------------------------
    # preprocessing

    def prepare(self, page: RawPage) -> Sample:
        tree = page_tree(page, self.config.domain_enabled, self.config.max_nodes)
        return tree_to_sample(tree, self.vocab, page.label, page.source)

    def prepare_tree(self, tree: DomTree, label: int | None = None, source: str = "") -> Sample:
        if tree.has_domain and not self.config.domain_enabled:
            tree = tree.without_domain()
        return tree_to_sample(tree, self.vocab, label, source)

    # ------------------------------------------------------------------
    # forward

    def features(self, samples: Sequence[Sample]) -> tuple[torch.Tensor, Forest]:
        sizes = np.array([s.n for s in samples], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        parent = np.concatenate([np.where(s.parent >= 0, s.parent + o, -1) for s, o in zip(samples, offsets[:-1])])
        rows = torch.as_tensor(np.concatenate([s.rows for s in samples]))
        X = self.table[rows]
        with_domain = [(o + s.domain_row, s.domain_chars) for s, o in zip(samples, offsets[:-1]) if s.domain_row >= 0]
        if with_domain:
            if self.domain_encoder is None:
                raise ValueError("sample carries a domain node but the model has no domain encoder")
            at = torch.as_tensor([int(r) for r, _ in with_domain])
            X = X.index_copy(0, at, self.domain_encoder([c for _, c in with_domain]).to(X.dtype))
        return X, Forest(parent.astype(np.int64), offsets.astype(np.int64))

    def forward(self, samples: Sequence[Sample]) -> Output:
        cfg = self.config
        X, forest = self.features(samples)
        X = layer_norm(X, self.ln_gamma, self.ln_beta)
        if self.gcn is not None:
            X = self.gcn(X, forest)
        B = forest.n_graphs
        sizes = [s.n for s in samples]
        if self.variant == "no_ae":
            gid = torch.as_tensor(forest.graph_ids)
            counts = torch.as_tensor(np.diff(forest.offsets), dtype=X.dtype)
            pooled = torch.zeros(B, X.shape[1], dtype=X.dtype).index_add(0, gid, X) / counts.unsqueeze(1)
            zero = torch.zeros(B, dtype=X.dtype)
            return Output(zero, pooled, zero + 0.5, self.mlp(pooled), sizes)
        pooled = restore_connectivity(topk_pool_forest(X, forest, cfg.pool_ratio, self.pool_p))
        graph = build_mirror(pooled)
        enc = encode(pooled.features, graph, self.enc_W, self.enc_b, self.act, cfg.leaky_slope)
        root_state = enc[torch.as_tensor(graph.roots)]
        if self.variant == "no_decoder":
            zero = torch.zeros(B, dtype=X.dtype)
            return Output(zero, root_state, zero + 0.5, self.mlp(root_state), sizes)
        X_hat = decode(graph, root_state, self.dec_W, self.dec_b, self.act, cfg.leaky_slope)
        eps, delta = forest_errors(pooled.features, X_hat, graph, cfg.root_in_error)
        prob1 = prob_threshold(eps, self.tau.to(eps.dtype), self.beta.to(eps.dtype))
        return Output(eps, delta, prob1, self.mlp(delta), sizes)

    # ------------------------------------------------------------------
    # loss and decision

    def loss(self, out: Output, y_internal: torch.Tensor) -> torch.Tensor:
        y = y_internal.to(out.eps.dtype)
        if self.variant in ("no_rec_loss", "no_decoder", "no_ae"):
            return loss_classification(out.prob2, y).mean()
        l1 = loss_reconstruction(out.eps, y).mean()
        if self.variant == "no_cls_loss":
            return l1
        l2 = loss_classification(out.prob2, y).mean()
        return multitask_loss(l1, l2, self.w1, self.w2)

    def decide(self, out: Output) -> np.ndarray:
        """Internal decisions (1 = benign); the boundary 0.5 goes to 0."""
        how = DECIDER[self.variant]
        if how == "prob1":
            p = out.prob1
        elif how == "prob2":
            p = out.prob2
        else:
            p = (out.prob1 + out.prob2) / 2
        return (p.detach().cpu().numpy() > 0.5).astype(np.int64)

    def trainable(self) -> list[tuple[str, nn.Parameter]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]
