import warnings

import numpy as np
import pytest
import torch

from specnet.dom import NodeKind, attach_domain_node, parse_html
from specnet.embeddings import (
    UNK_ATTR,
    UNK_TAG,
    DomainEncoder,
    build_vocabulary,
    domain_charset,
    domain_to_indices,
    encode_domain,
    featurize,
    train_embeddings,
    tree_sentences,
)
from specnet.errors import DegenerateVocabulary, EmptyCorpus
from specnet.nn import grad_check


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_vocabulary_is_standard_and_observed():
    t = parse_html(b'<html><body><div><a href="x"></a></div></body></html>')
    v = build_vocabulary([t])
    assert set(v.tag_tokens) == {"html", "body", "div", "a"}
    assert v.attr_tokens == ("href",)
    assert len(v) == 4 + 1 + 2
    one = parse_html(b'<div href="q"></div>')
    v1 = build_vocabulary([one])
    assert v1.tag_tokens == ("body", "div", "html") and v1.attr_tokens == ("href",) and len(v1) == 6


def test_custom_and_unobserved_tokens_resolve_to_unknown():
    t = parse_html(b'<x-fake-widget data-q="1"></x-fake-widget><p></p>')
    v = build_vocabulary([t])
    assert "x-fake-widget" not in v.tag_tokens
    assert v.lookup("x-fake-widget", NodeKind.TAG) == UNK_TAG
    assert v.lookup("table", "tag") == UNK_TAG  # standard but never observed
    assert v.lookup("data-q", "attr") == UNK_ATTR
    assert v.index("zzz", "attr") == v.index(UNK_ATTR, "attr")


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        build_vocabulary([])


def test_tree_sentences_group_tag_with_attributes():
    t = parse_html(b'<a href="x" rel="y"></a>')
    v = build_vocabulary([t])
    sents = tree_sentences(t, v)
    assert [v.keys[i][1] for i in sents[-1]] == ["a", "href", "rel"]


def _cooccurrence_corpus(n=500):
    docs = []
    for i in range(n):
        docs.append(parse_html(b'<a href="x"></a>' if i % 2 == 0 else b'<table border="1"></table>'))
    return docs


@pytest.mark.parametrize("seed", range(5))
def test_cooccurring_tokens_end_up_closer(seed):
    corpus = _cooccurrence_corpus()
    v = build_vocabulary(corpus)
    table = train_embeddings(corpus, v, seed=seed)
    a, href, tab = table.lookup("a", "tag"), table.lookup("href", "attr"), table.lookup("table", "tag")
    assert cosine(a, href) > cosine(a, tab)
    assert np.isfinite(table.vectors).all()


def test_unknown_lookup_returns_trained_unknown_row():
    corpus = _cooccurrence_corpus(50)
    v = build_vocabulary(corpus)
    table = train_embeddings(corpus, v, seed=0)
    assert np.array_equal(table.lookup("nonsense", "tag"), table.vectors[v.index(UNK_TAG, "tag")])


def test_degenerate_vocabulary_falls_back():
    t = parse_html(b"")
    v = build_vocabulary([t])
    assert len(v) == 3
    with pytest.warns(DegenerateVocabulary):
        table = train_embeddings([t], v)
    assert table.vectors.shape == (3, 32) and np.isfinite(table.vectors).all()


def test_embeddings_deterministic_per_seed():
    corpus = _cooccurrence_corpus(60)
    v = build_vocabulary(corpus)
    a = train_embeddings(corpus, v, seed=4).vectors
    b = train_embeddings(corpus, v, seed=4).vectors
    c = train_embeddings(corpus, v, seed=5).vectors
    assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()


def test_charset_size():
    cs = domain_charset()
    assert len(cs) == 60 and len(set(cs)) == 60
    assert domain_to_indices("A.b") == domain_to_indices("a.b")
    assert domain_to_indices("é")[0] == len(cs) - 1


def test_empty_domain_encodes_to_zero():
    enc = DomainEncoder()
    assert torch.equal(encode_domain("", enc), torch.zeros(32))


def test_single_character_is_one_cell_step():
    enc = DomainEncoder(gen=torch.Generator().manual_seed(3)).double()
    x = enc.char_emb[domain_to_indices("a")[0]]
    W_ih, W_hh, bias = enc.w_ih[0], enc.w_hh[0], enc.bias[0]
    h0 = torch.zeros(32, dtype=torch.float64)
    gates = W_ih @ x + W_hh @ h0 + bias
    i, f, g, o = gates[:32].sigmoid(), gates[32:64].sigmoid(), gates[64:96].tanh(), gates[96:].sigmoid()
    c = f * 0 + i * g
    expected = o * torch.tanh(c)
    assert torch.allclose(encode_domain("a", enc), expected, atol=1e-12)


def test_domain_encoder_gradient():
    enc = DomainEncoder(gen=torch.Generator().manual_seed(0)).double()
    params = dict(enc.named_parameters())
    rep = grad_check(lambda: encode_domain("ab.cd", enc).sum(), params, tolerance=1e-4, max_entries=30)
    assert rep.passed, rep.errors


def test_batched_domains_match_single():
    enc = DomainEncoder()
    doms = ["a.com", "", "paypa1-login.secure-verify.com", "x"]
    batch = enc([domain_to_indices(d) for d in doms])
    for k, d in enumerate(doms):
        assert torch.allclose(batch[k], encode_domain(d, enc), atol=1e-6)


def test_featurize_rows():
    base = parse_html(b'<html><body><a href="x"></a><x-odd></x-odd></body></html>')
    v = build_vocabulary([base])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        table = train_embeddings([base], v)
    enc = DomainEncoder()
    tree = attach_domain_node(base, "paypa1-login.com")
    X = featurize(tree, table, enc)
    assert X.shape == (len(tree), 32)
    assert torch.equal(X[1], encode_domain("paypa1-login.com", enc))
    X_off = featurize(tree, table, enc, use_domain=False)
    assert X_off.shape == (len(base), 32)
    odd = base.tokens.index("x-odd")
    assert np.array_equal(X_off[odd].numpy(), table.vectors[v.index(UNK_TAG, "tag")])
