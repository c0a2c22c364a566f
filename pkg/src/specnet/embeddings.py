"""Node features: skip-gram token vectors for tags/attributes and a character LSTM for domains."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

import numba
import numpy as np
import torch
from torch import nn

from .dom import DomTree, NodeKind
from .errors import DegenerateVocabulary, EmptyCorpus
from .nn import kaiming_uniform, linear

UNK_TAG = "<unk-tag>"
UNK_ATTR = "<unk-attr>"
UNK_CHAR = "<unk>"


def _read_list(name: str) -> tuple[str, list[str]]:
    text = resources.files("specnet").joinpath("data", name).read_text(encoding="utf-8")
    version = ""
    items = []
    for line in text.splitlines():
        if line.startswith("#"):
            version = version or line[1:].strip().split()[0]
            continue
        if line:
            items.append(line)
    return version, items


@lru_cache(maxsize=None)
def html_standard() -> tuple[str, frozenset[str], frozenset[str]]:
    """(version, element names, attribute names) of the shipped HTML standard list."""
    version, elements = _read_list("html_elements.txt")
    _, attributes = _read_list("html_attributes.txt")
    return version, frozenset(elements), frozenset(attributes)


@lru_cache(maxsize=None)
def domain_charset() -> tuple[str, ...]:
    _, chars = _read_list("domain_charset.txt")
    return tuple(chars) + (UNK_CHAR,)


# ---------------------------------------------------------------------------
# vocabulary


@dataclass(frozen=True)
class TokenVocabulary:
    tag_tokens: tuple[str, ...]
    attr_tokens: tuple[str, ...]
    standard_list_version: str

    unk_tag = UNK_TAG
    unk_attr = UNK_ATTR

    @property
    def keys(self) -> list[tuple[str, str]]:
        """Row layout of the embedding table."""
        return ([("tag", UNK_TAG)] + [("tag", t) for t in self.tag_tokens]
                + [("attr", UNK_ATTR)] + [("attr", a) for a in self.attr_tokens])

    def __len__(self) -> int:
        return len(self.tag_tokens) + len(self.attr_tokens) + 2

    @property
    def _index(self) -> dict[tuple[str, str], int]:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {k: i for i, k in enumerate(self.keys)}
            object.__setattr__(self, "_idx", idx)
        return idx

    def lookup(self, token: str, kind: NodeKind | str) -> str:
        """The vocabulary token ``token`` resolves to (itself or the kind's unknown)."""
        kind = _kind(kind)
        if (kind, token) in self._index:
            return token
        return UNK_TAG if kind == "tag" else UNK_ATTR

    def index(self, token: str, kind: NodeKind | str) -> int:
        kind = _kind(kind)
        i = self._index.get((kind, token))
        if i is None:
            i = self._index[("tag", UNK_TAG)] if kind == "tag" else self._index[("attr", UNK_ATTR)]
        return i


def _kind(kind: NodeKind | str) -> str:
    value = kind.value if isinstance(kind, NodeKind) else kind
    if value not in ("tag", "attr"):
        raise ValueError(f"no vocabulary for node kind {value!r}")
    return value


def build_vocabulary(corpus: Iterable[DomTree]) -> TokenVocabulary:
    """Observed tokens that are also documented HTML-standard names, sorted."""
    version, elements, attributes = html_standard()
    tags: set[str] = set()
    attrs: set[str] = set()
    empty = True
    for tree in corpus:
        empty = False
        for kind, token in zip(tree.kinds, tree.tokens):
            if kind is NodeKind.TAG and token in elements:
                tags.add(token)
            elif kind is NodeKind.ATTR and token in attributes:
                attrs.add(token)
    if empty:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    return TokenVocabulary(tuple(sorted(tags)), tuple(sorted(attrs)), version)


def tree_sentences(tree: DomTree, vocab: TokenVocabulary) -> list[list[int]]:
    """One sentence per tag node: the tag followed by its attributes in child order."""
    out = []
    children = tree.children
    for v, kind in enumerate(tree.kinds):
        if kind is not NodeKind.TAG:
            continue
        sent = [vocab.index(tree.tokens[v], "tag")]
        for c in children[v]:
            if tree.kinds[c] is NodeKind.ATTR:
                sent.append(vocab.index(tree.tokens[c], "attr"))
        out.append(sent)
    return out


# ---------------------------------------------------------------------------
# skip-gram with negative sampling


@dataclass
class EmbeddingTable:
    vocab: TokenVocabulary
    vectors: np.ndarray  # (len(vocab), dim) float32

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, token: str, kind: NodeKind | str) -> np.ndarray:
        return self.vectors[self.vocab.index(token, kind)]


@numba.njit(cache=True)
def _sgns_pass(syn0, syn1, centers, contexts, negatives, lr0, done, total):
    dim = syn0.shape[1]
    neu1e = np.empty(dim, dtype=syn0.dtype)
    for k in range(centers.shape[0]):
        lr = lr0 * max(1e-4, 1.0 - (done + k) / total)
        c = centers[k]
        neu1e[:] = 0.0
        for d in range(negatives.shape[1] + 1):
            if d == 0:
                target = contexts[k]
                label = 1.0
            else:
                target = negatives[k, d - 1]
                if target == contexts[k]:
                    continue
                label = 0.0
            f = 0.0
            for j in range(dim):
                f += syn0[c, j] * syn1[target, j]
            if f > 6.0:
                sig = 1.0
            elif f < -6.0:
                sig = 0.0
            else:
                sig = 1.0 / (1.0 + np.exp(-f))
            g = (label - sig) * lr
            for j in range(dim):
                neu1e[j] += g * syn1[target, j]
                syn1[target, j] += g * syn0[c, j]
        for j in range(dim):
            syn0[c, j] += neu1e[j]


def sentence_pairs(sentences: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """All (center, context) pairs with a window spanning the whole sentence."""
    centers, contexts = [], []
    for sent in sentences:
        n = len(sent)
        for i in range(n):
            for j in range(n):
                if i != j:
                    centers.append(sent[i])
                    contexts.append(sent[j])
    return np.asarray(centers, dtype=np.int64), np.asarray(contexts, dtype=np.int64)


def train_embeddings(
    corpus: Iterable[DomTree],
    vocab: TokenVocabulary,
    dim: int = 32,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
) -> EmbeddingTable:
    """Skip-gram/negative-sampling vectors for every vocabulary row, unknowns included.

    The returned vector of a token is the sum of its input and output
    vectors, so tokens that co-occur (rather than merely share contexts)
    end up close.
    """
    rng = np.random.default_rng(seed)
    n = len(vocab)
    if n - 2 < 2:
        warnings.warn(DegenerateVocabulary(f"vocabulary has {n - 2} tokens; using a random table"))
        return EmbeddingTable(vocab, (rng.standard_normal((n, dim)) / np.sqrt(dim)).astype(np.float32))

    sentences = [s for tree in corpus for s in tree_sentences(tree, vocab)]
    counts = np.zeros(n, dtype=np.float64)
    for s in sentences:
        np.add.at(counts, s, 1.0)
    syn0 = ((rng.random((n, dim)) - 0.5) / dim).astype(np.float64)
    syn1 = np.zeros((n, dim), dtype=np.float64)
    centers, contexts = sentence_pairs(sentences)
    if len(centers) and counts.sum() > 0:
        dist = counts**0.75
        cdf = np.cumsum(dist / dist.sum())
        total = float(len(centers) * epochs)
        for epoch in range(epochs):
            draws = rng.random((len(centers), negatives))
            negs = np.minimum(np.searchsorted(cdf, draws, side="right"), n - 1).astype(np.int64)
            _sgns_pass(syn0, syn1, centers, contexts, negs, lr, float(epoch * len(centers)), total)
    return EmbeddingTable(vocab, (syn0 + syn1).astype(np.float32))


# ---------------------------------------------------------------------------
# domain encoder


def domain_to_indices(domain: str, charset: Sequence[str] | None = None) -> list[int]:
    charset = charset or domain_charset()
    lookup = {c: i for i, c in enumerate(charset)}
    unk = lookup[UNK_CHAR]
    return [lookup.get(ch, unk) for ch in domain.strip().lower()]


class DomainEncoder(nn.Module):
    """Character embeddings followed by a stacked LSTM; the domain vector is the last hidden state."""

    def __init__(self, hidden: int = 32, layers: int = 1, char_dim: int | None = None,
                 gen: torch.Generator | None = None):
        super().__init__()
        gen = gen or torch.Generator().manual_seed(0)
        self.charset = domain_charset()
        self.hidden = hidden
        char_dim = char_dim or hidden
        self.char_emb = nn.Parameter(torch.randn(len(self.charset), char_dim, generator=gen, dtype=torch.float64).float())
        self.w_ih = nn.ParameterList()
        self.w_hh = nn.ParameterList()
        self.bias = nn.ParameterList()
        in_dim = char_dim
        for _ in range(layers):
            self.w_ih.append(nn.Parameter(kaiming_uniform((4 * hidden, in_dim), in_dim, gen).float()))
            self.w_hh.append(nn.Parameter(kaiming_uniform((4 * hidden, hidden), hidden, gen).float()))
            b = torch.zeros(4 * hidden)
            b[hidden:2 * hidden] = 1.0  # forget gate (gate order: input, forget, cell, output)
            self.bias.append(nn.Parameter(b))
            in_dim = hidden

    def cell(self, x: torch.Tensor, h: torch.Tensor, c: torch.Tensor, layer: int) -> tuple[torch.Tensor, torch.Tensor]:
        gates = linear(x, self.w_ih[layer]) + linear(h, self.w_hh[layer], self.bias[layer])
        H = self.hidden
        i = torch.sigmoid(gates[..., :H])
        f = torch.sigmoid(gates[..., H:2 * H])
        g = torch.tanh(gates[..., 2 * H:3 * H])
        o = torch.sigmoid(gates[..., 3 * H:])
        c = f * c + i * g
        h = o * torch.tanh(c)
        return h, c

    def forward(self, domains: Sequence[Sequence[int]]) -> torch.Tensor:
        """Batch of character-index sequences -> (B, hidden); empty sequences give zeros."""
        B = len(domains)
        dtype = self.char_emb.dtype
        if B == 0:
            return torch.zeros(0, self.hidden, dtype=dtype)
        lengths = torch.tensor([len(d) for d in domains])
        T = int(lengths.max()) if B else 0
        padded = torch.zeros(B, max(T, 1), dtype=torch.long)
        for b, d in enumerate(domains):
            if len(d):
                padded[b, : len(d)] = torch.as_tensor(d)
        x = self.char_emb[padded]  # (B, T, E)
        for layer in range(len(self.w_ih)):
            h = torch.zeros(B, self.hidden, dtype=dtype)
            c = torch.zeros(B, self.hidden, dtype=dtype)
            outs = []
            for t in range(T):
                h_new, c_new = self.cell(x[:, t], h, c, layer)
                live = (lengths > t).unsqueeze(1)
                h = torch.where(live, h_new, h)
                c = torch.where(live, c_new, c)
                outs.append(h)
            if not outs:
                return h
            x = torch.stack(outs, dim=1)
        return h


def encode_domain(domain: str, encoder: DomainEncoder) -> torch.Tensor:
    return encoder([domain_to_indices(domain, encoder.charset)])[0]


def featurize(tree: DomTree, table: EmbeddingTable, encoder: DomainEncoder | None,
              use_domain: bool = True) -> torch.Tensor:
    """One row per node in node-index order; the domain row comes from the encoder."""
    if tree.has_domain and not use_domain:
        tree = tree.without_domain()
    idx = [table.vocab.index(t, k) if k is not NodeKind.DOMAIN else 0 for k, t in zip(tree.kinds, tree.tokens)]
    dtype = encoder.char_emb.dtype if encoder is not None else torch.float32
    X = torch.as_tensor(table.vectors, dtype=dtype)[torch.as_tensor(idx, dtype=torch.long)]
    if tree.has_domain:
        if encoder is None:
            raise ValueError("tree carries a domain node but no domain encoder was given")
        row = tree.kinds.index(NodeKind.DOMAIN)
        vec = encode_domain(tree.tokens[row], encoder)
        X = X.index_copy(0, torch.tensor([row]), vec.unsqueeze(0))
    return X
