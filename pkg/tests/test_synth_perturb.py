import json

import pytest
from hypothesis import given, settings, strategies as st

from specnet.dom import build_element_tree, parse_html, serialize
from specnet.perturb import PerturbationSpec, content_multiset, perturb_html, perturb_pages
from specnet.synth import generate, generate_split, write_corpus
from conftest import as_pages


def shape(html):
    t = parse_html(html)
    return list(zip(t.tokens, t.depth))


def test_generate_writes_pages_and_manifest(tmp_path):
    pages = generate(2, 10, seed=3)
    path = write_corpus(tmp_path, pages)
    assert len(list((tmp_path / "pages").glob("*.html"))) == 20
    lines = path.read_text().splitlines()
    assert len(lines) == 20 and {json.loads(x)["label"] for x in lines} == {0, 1}


def test_zero_noise_pages_are_isomorphic():
    pages = generate(2, 6, noise=0.0, seed=1)
    for t in (0, 1):
        shapes = {tuple(shape(p.html)) for p in pages if p.template == t}
        assert len(shapes) == 1


def test_same_seed_same_bytes():
    a = generate(4, 3, noise=0.3, seed=9, overlap=0.5)
    b = generate(4, 3, noise=0.3, seed=9, overlap=0.5)
    assert [(p.html, p.domain) for p in a] == [(p.html, p.domain) for p in b]


def test_split_counts_and_balance():
    s = generate_split((5, 2, 3), n_templates=6, seed=0)
    assert {k: len(v) for k, v in s.items()} == {"train": 10, "val": 4, "test": 6}
    assert sum(p.label for p in s["train"]) == 5


def test_target_size_is_respected():
    sizes = [len(parse_html(p.html)) for p in generate(6, 1, target_nodes=1000, seed=2)]
    assert all(700 <= n <= 1400 for n in sizes), sizes


def test_intensity_zero_is_a_no_op():
    for p in generate(4, 2, seed=4):
        out, log = perturb_html(p.html, [PerturbationSpec("shuffle_siblings", 0.0),
                                         PerturbationSpec("insert_redundant", 0.0),
                                         PerturbationSpec("wrap_subtree", 0.0)])
        assert log.count() == 0 and shape(out) == shape(p.html)


def test_shuffle_is_seeded_and_recorded():
    html = b"<html><body><div><a></a><b></b><i></i></div></body></html>"
    spec = [PerturbationSpec("shuffle_siblings", 1.0, seed=5)]
    out1, log1 = perturb_html(html, spec)
    out2, log2 = perturb_html(html, spec)
    assert out1 == out2 and log1.entries == log2.entries
    entry = next(e for e in log1.entries if len(e["permutation"]) == 3)
    order = [["a", "b", "i"][j] for j in entry["permutation"]]
    t = parse_html(out1)
    div = t.tokens.index("div")
    assert [t.tokens[c] for c in t.children[div]] == order


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.1, 0.3, 1.0]))
def test_insertions_add_exactly_logged_nodes_and_keep_content(seed, intensity):
    page = generate(2, 1, noise=0.3, seed=seed % 1000)[seed % 2]
    out, log = perturb_html(page.html, [PerturbationSpec("insert_redundant", intensity, seed)])
    assert len(parse_html(out)) == len(parse_html(page.html)) + log.count("insert_redundant")
    assert content_multiset(out) == content_multiset(page.html)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["shuffle_siblings", "wrap_subtree"]))
def test_edits_survive_reparse(seed, kind):
    page = generate(2, 1, noise=0.3, seed=seed % 1000)[seed % 2]
    root = build_element_tree(page.html)
    out, log = perturb_html(page.html, [PerturbationSpec(kind, 0.5, seed)])
    # what the browser-like parser recovers is exactly what was serialized
    assert serialize(build_element_tree(out)) == out
    assert content_multiset(out) == content_multiset(page.html)
    n_wrapped = log.count("wrap_subtree")
    assert len(parse_html(out)) == len(parse_html(serialize(root))) + n_wrapped


def test_perturb_pages_writes_manifest(tmp_path):
    pages = as_pages(generate(2, 3, seed=0))
    path, logs = perturb_pages(pages, [PerturbationSpec("insert_redundant", 0.1),
                                       PerturbationSpec("shuffle_siblings", 0.1)], tmp_path)
    rows = [json.loads(x) for x in path.read_text().splitlines()]
    assert len(rows) == 6 and [r["label"] for r in rows] == [p.label for p in pages]
    assert all((tmp_path / r["html_path"]).exists() for r in rows)


def test_bad_spec():
    with pytest.raises(ValueError):
        PerturbationSpec("delete_everything", 0.1)
    with pytest.raises(ValueError):
        PerturbationSpec("shuffle_siblings", 1.5)
