import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import oracles
from specnet.backbone import Forest
from specnet.errors import ShapeError
from specnet.specular import (
    build_mirror_from_forest,
    decode,
    encode,
    forest_errors,
    reconstruction_error,
)

D = torch.float64


def graph_of(parent, X):
    return build_mirror_from_forest(Forest.from_parent(np.asarray(parent)), X)


def leaky(z):
    return z if z > 0 else 0.01 * z


def test_mirror_size_examples():
    g1 = graph_of([-1], torch.zeros(1, 2, dtype=D))
    assert g1.num_nodes == 1 and g1.edges() == [] and len(g1.paired) == 0
    g4 = graph_of([-1, 0, 0, 1], torch.zeros(4, 2, dtype=D))
    assert g4.num_nodes == 7 and len(g4.edges()) == 6


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 150), st.integers(0, 10**6))
def test_pairing_is_a_bijection_and_mirror_reverses_edges(n, seed):
    rng = np.random.default_rng(seed)
    parent = oracles.random_parent(rng, n)
    g = graph_of(parent, torch.zeros(n, 1, dtype=D))
    mirrored = g.mir_nodes
    assert sorted(g.mirror_of[g.paired].tolist()) == mirrored.tolist()
    for u in mirrored:
        v = g.paired[u - n]
        assert g.mirror_of[v] == u
        # mirror edge runs parent -> child, same pair as the encoder edge child -> parent
        assert g.mirror_parent(int(u)) == g.mirror_of[parent[v]]
    assert g.num_nodes == 2 * n - 1 and len(g.edges()) == 2 * (n - 1)


def test_single_child_message_is_the_child_state():
    X = torch.tensor([[0.3, -0.2], [0.5, 0.1]], dtype=D)
    W = torch.eye(2, 4, dtype=D)  # picks the message half
    b = torch.zeros(2, dtype=D)
    H = encode(X, graph_of([-1, 0], X), W, b)
    leaf = H[1]  # zero message -> leaky(0) = 0
    assert torch.equal(leaf, torch.zeros(2, dtype=D))
    Wx = torch.cat([torch.zeros(2, 2), torch.eye(2)], 1).to(D)
    H2 = encode(X, graph_of([-1, 0], X), torch.eye(2, 4, dtype=D) + Wx, b)
    # leaf state = leaky(x_leaf); root = leaky(1.0 * h_leaf + x_root)
    h_leaf = torch.tensor([leaky(0.5), leaky(0.1)], dtype=D)
    expect = torch.tensor([leaky(0.3 + h_leaf[0].item()), leaky(-0.2 + h_leaf[1].item())], dtype=D)
    assert torch.allclose(H2[0], expect, atol=1e-12)


def test_identical_children_give_uniform_weights():
    X = torch.tensor([[1.0, 2.0], [0.4, -0.3], [0.4, -0.3], [0.4, -0.3]], dtype=D)
    W = torch.cat([torch.eye(2), torch.eye(2)], 1).to(D)
    b = torch.zeros(2, dtype=D)
    H = encode(X, graph_of([-1, 0, 0, 0], X), W, b)
    h = torch.tensor([0.4, leaky(-0.3)], dtype=D)
    # weights 1/3 each, summed rows then divided by three children
    msg = h / 3
    expect = torch.tensor([leaky(msg[0].item() + 1.0), leaky(msg[1].item() + 2.0)], dtype=D)
    assert torch.allclose(H[0], expect, atol=1e-12)


def test_three_node_chain_hand_unrolled():
    # chain 0 <- 1 <- 2 with 2-d features
    X = torch.tensor([[1.0, 0.0], [0.0, 1.0], [0.5, -1.0]], dtype=D)
    We = torch.tensor([[1.0, 0.0, 0.5, 0.0], [0.0, 1.0, 0.0, 0.5]], dtype=D)
    be = torch.tensor([0.1, -0.1], dtype=D)
    Wd = torch.tensor([[0.5, 0.0, 1.0, 0.0], [0.0, -0.5, 0.0, 1.0]], dtype=D)
    bd = torch.zeros(2, dtype=D)
    g = graph_of([-1, 0, 1], X)
    H = encode(X, g, We, be)
    # leaf: msg 0 -> [0.5*0.5+0.1, 0.5*-1-0.1] = [0.35, -0.6] -> leaky -> [0.35, -0.006]
    h2 = np.array([0.35, -0.006])
    # node 1: single child, msg = h2 -> [0.35+0+0.1, -0.006+0.5-0.1] = [0.45, 0.394]
    h1 = np.array([0.45, 0.394])
    # root: msg = h1 -> [0.45+0.5+0.1, 0.394+0-0.1] = [1.05, 0.294]
    h0 = np.array([1.05, 0.294])
    assert np.allclose(H.numpy(), np.stack([h0, h1, h2]), atol=1e-12)
    R = decode(g, H[0], Wd, bd)
    # node 1: [0.5*1.05+0, -0.5*0.294+1] = [0.525, 0.853]
    r1 = np.array([0.525, 0.853])
    # node 2: [0.5*0.525+0.5, -0.5*0.853-1] = [0.7625, -1.4265] -> leaky
    r2 = np.array([0.7625, -0.014265])
    assert np.allclose(R.numpy(), np.stack([h0, r1, r2]), atol=1e-12)


def test_decoder_degenerate_cases():
    X = torch.tensor([[0.7, -0.1]], dtype=D)
    root = torch.tensor([0.2, 0.3], dtype=D)
    assert torch.equal(decode(graph_of([-1], X), root, torch.ones(2, 4, dtype=D), torch.ones(2, dtype=D))[0], root)
    X4 = torch.randn(4, 2, dtype=D)
    R = decode(graph_of([-1, 0, 1, 0], X4), root, torch.zeros(2, 4, dtype=D), torch.zeros(2, dtype=D))
    assert torch.equal(R[1:], torch.zeros(3, 2, dtype=D))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(0, 10**6))
def test_encode_decode_match_recursive_oracle(n, seed):
    rng = np.random.default_rng(seed)
    parent = oracles.random_parent(rng, n)
    F = 4
    X = rng.standard_normal((n, F))
    We, be = rng.standard_normal((F, 2 * F)) * 0.5, rng.standard_normal(F) * 0.1
    Wd, bd = rng.standard_normal((F, 2 * F)) * 0.5, rng.standard_normal(F) * 0.1
    Xt = torch.tensor(X)
    g = graph_of(parent, Xt)
    H = encode(Xt, g, torch.tensor(We), torch.tensor(be))
    R = decode(g, H[0], torch.tensor(Wd), torch.tensor(bd))
    H_ref, R_ref = oracles.unrolled_autoencoder(X, parent, We, be, Wd, bd)
    assert np.allclose(H.numpy(), H_ref, atol=1e-10)
    assert np.allclose(R.numpy(), R_ref, atol=1e-10)


def check_logs(parent, g, enc_log, dec_log):
    """Every node updated exactly once, children before parents (encode), parents before children (decode)."""
    n = len(parent)
    enc_order = np.concatenate(enc_log) if enc_log else np.zeros(0, int)
    assert sorted(enc_order.tolist()) == list(range(n))
    when = np.empty(n, int)
    when[enc_order] = np.arange(n)
    for v in range(1, n):
        assert when[v] < when[parent[v]]
    dec_order = np.concatenate(dec_log) if dec_log else np.zeros(0, int)
    assert sorted(dec_order.tolist()) == g.mir_nodes.tolist()
    seen = {0}
    for u in dec_order:
        assert g.mirror_parent(int(u)) in seen
        seen.add(int(u))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 200), st.integers(0, 10**6))
def test_update_logs_follow_levels(n, seed):
    rng = np.random.default_rng(seed)
    parent = oracles.random_parent(rng, n)
    X = torch.tensor(rng.standard_normal((n, 3)))
    g = graph_of(parent, X)
    enc_log, dec_log = [], []
    H = encode(X, g, torch.ones(3, 6, dtype=D) * 0.1, torch.zeros(3, dtype=D), log=enc_log)
    decode(g, H[0], torch.ones(3, 6, dtype=D) * 0.1, torch.zeros(3, dtype=D), log=dec_log)
    check_logs(parent, g, enc_log, dec_log)


def test_sibling_order_does_not_change_root_state():
    X = torch.randn(4, 3, dtype=D, generator=torch.Generator().manual_seed(2))
    W = torch.randn(3, 6, dtype=D, generator=torch.Generator().manual_seed(3))
    b = torch.zeros(3, dtype=D)
    H1 = encode(X, graph_of([-1, 0, 0, 0], X), W, b)
    Xp = X[[0, 3, 1, 2]]
    H2 = encode(Xp, graph_of([-1, 0, 0, 0], Xp), W, b)
    assert torch.allclose(H1[0], H2[0], atol=1e-12)


def test_reconstruction_error_examples():
    X = torch.randn(5, 3, dtype=D)
    E, eps, delta = reconstruction_error(X, X.clone())
    assert eps.item() == 0 and torch.equal(delta, torch.zeros(3, dtype=D))
    E, eps, delta = reconstruction_error(torch.tensor([[2.0]], dtype=D), torch.tensor([[0.5]], dtype=D))
    assert E.item() == 2.25 and eps.item() == 2.25 and delta.tolist() == [2.25]
    rng = np.random.default_rng(0)
    A, B = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    _, eps, delta = reconstruction_error(torch.tensor(A), torch.tensor(B))
    brute = sum((A[i, j] - B[i, j]) ** 2 for i in range(5) for j in range(3)) / 15
    assert abs(eps.item() - brute) < 1e-12
    assert abs(delta.mean().item() - eps.item()) < 1e-12
    with pytest.raises(ShapeError):
        reconstruction_error(torch.zeros(2, 3), torch.zeros(3, 2))


def test_forest_errors_per_graph():
    rng = np.random.default_rng(1)
    X, Y = torch.tensor(rng.standard_normal((6, 2))), torch.tensor(rng.standard_normal((6, 2)))
    parent = np.array([-1, 0, 0, -1, 3, -1])
    g = build_mirror_from_forest(Forest(parent, np.array([0, 3, 5, 6])), X)
    eps, delta = forest_errors(X, Y, g)
    for k, (lo, hi) in enumerate([(0, 3), (3, 5), (5, 6)]):
        _, e, d = reconstruction_error(X[lo:hi], Y[lo:hi])
        assert math.isclose(eps[k].item(), e.item(), abs_tol=1e-12)
        assert torch.allclose(delta[k], d, atol=1e-12)
    eps_nr, _ = forest_errors(X, Y, g, root_in_error=False)
    _, e, _ = reconstruction_error(X[1:3], Y[1:3])
    assert math.isclose(eps_nr[0].item(), e.item(), abs_tol=1e-12)
    assert math.isclose(eps_nr[2].item(), eps[2].item(), abs_tol=1e-12)
