"""Structure-only HTML perturbations: sibling shuffles, redundant empty containers, wrapping.

All edits act on the content tree and only move or add elements, so text
and attribute values are unchanged. Sites are limited to places where the
re-parsed tree keeps the edited shape (nothing inside head, tables' row
structure, select lists or raw-text elements).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dom import VOID, RAW_TEXT, Element, RawPage, build_element_tree, serialize, write_manifest

KINDS = ("shuffle_siblings", "insert_redundant", "wrap_subtree")
PHRASING = frozenset(
    "a abbr b bdi bdo button cite code data dfn em font h1 h2 h3 h4 h5 h6 i kbd label legend mark nobr p q "
    "s samp small span strike strong sub sup time tt u var caption figcaption summary dt".split()
)
RIGID = frozenset(
    "html head table thead tbody tfoot tr colgroup select optgroup datalist math svg ruby frameset".split()
) | RAW_TEXT | VOID
TABLE_PARTS = frozenset("caption colgroup col thead tbody tfoot tr td th".split())
LIST_ITEMS = frozenset("li dd dt option optgroup".split())


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    intensity: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown perturbation {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError("intensity must lie in [0, 1]")


@dataclass
class PerturbationLog:
    entries: list[dict] = field(default_factory=list)

    def count(self, op: str | None = None) -> int:
        return sum(1 for e in self.entries if op is None or e["op"] == op)


def _body(root: Element) -> Element | None:
    return next((c for c in root.elements() if c.tag == "body"), None)


def _preorder_index(root: Element) -> dict[int, int]:
    return {id(el): i for i, el in enumerate(root.iter())}


def _flow_elements(root: Element) -> list[Element]:
    """Elements under body whose subtree can be edited without re-parse surprises."""
    body = _body(root)
    if body is None:
        return []
    out, stack = [], [body]
    while stack:
        el = stack.pop()
        if el.tag in RIGID:
            continue
        out.append(el)
        stack.extend(reversed(el.elements()))
    return out


def _n_sites(n: int, intensity: float) -> int:
    return min(n, math.floor(intensity * n + 0.5))


def _choose(rng: np.random.Generator, sites: list, intensity: float) -> list:
    k = _n_sites(len(sites), intensity)
    if k == 0:
        return []
    picks = np.sort(rng.choice(len(sites), size=k, replace=False))
    return [sites[i] for i in picks]


def shuffle_siblings(root: Element, intensity: float, rng: np.random.Generator, log: PerturbationLog) -> None:
    index = _preorder_index(root)
    sites = [el for el in _flow_elements(root)
             if len(el.elements()) >= 2 and not any(c.tag in TABLE_PARTS for c in el.elements())]
    for el in _choose(rng, sites, intensity):
        slots = [i for i, c in enumerate(el.children) if isinstance(c, Element)]
        kids = [el.children[i] for i in slots]
        perm = rng.permutation(len(kids))
        for slot, j in zip(slots, perm):
            el.children[slot] = kids[j]
        log.entries.append({"op": "shuffle_siblings", "node": index[id(el)], "permutation": perm.tolist()})


def insert_redundant(root: Element, intensity: float, rng: np.random.Generator, log: PerturbationLog) -> None:
    index = _preorder_index(root)
    sites = _flow_elements(root)
    for el in _choose(rng, sites, intensity):
        tag = "span" if el.tag in PHRASING or rng.random() < 0.5 else "div"
        pos = int(rng.integers(len(el.children) + 1))
        new = Element(tag)
        new.parent = el
        el.children.insert(pos, new)
        log.entries.append({"op": "insert_redundant", "node": index[id(el)], "position": pos, "tag": tag})


def wrap_subtree(root: Element, intensity: float, rng: np.random.Generator, log: PerturbationLog) -> None:
    index = _preorder_index(root)
    sites = [c for el in _flow_elements(root) for c in el.elements()
             if c.tag not in RIGID - VOID and c.tag not in TABLE_PARTS and c.tag not in LIST_ITEMS
             and c.tag != "form"]
    for el in _choose(rng, sites, intensity):
        parent = el.parent
        tag = "span" if parent.tag in PHRASING else "div"
        wrapper = Element(tag)
        wrapper.parent = parent
        parent.children[parent.children.index(el)] = wrapper
        el.parent = wrapper
        wrapper.children.append(el)
        log.entries.append({"op": "wrap_subtree", "node": index[id(el)], "tag": tag})


OPS = {"shuffle_siblings": shuffle_siblings, "insert_redundant": insert_redundant, "wrap_subtree": wrap_subtree}


def perturb_html(html: bytes, specs: Sequence[PerturbationSpec], page_index: int = 0) -> tuple[bytes, PerturbationLog]:
    """Apply ``specs`` in order; the output depends only on (html, specs, page_index)."""
    root = build_element_tree(html)
    log = PerturbationLog()
    for k, spec in enumerate(specs):
        rng = np.random.default_rng([spec.seed, page_index, k])
        OPS[spec.kind](root, spec.intensity, rng, log)
    return serialize(root), log


def content_multiset(html: bytes) -> tuple[list[str], list[str]]:
    """Sorted text chunks and attribute values of a document (the fidelity proxy)."""
    texts, values = [], []
    for el in build_element_tree(html).iter():
        texts += [c for c in el.children if isinstance(c, str)]
        values += [v for _, v in el.attrs if v is not None]
    return sorted(texts), sorted(values)


def perturb_pages(pages: Sequence[RawPage], specs: Sequence[PerturbationSpec], out_dir: str | Path,
                  manifest: str = "manifest.jsonl") -> tuple[Path, list[PerturbationLog]]:
    out = Path(out_dir)
    (out / "pages").mkdir(parents=True, exist_ok=True)
    records, logs = [], []
    for i, page in enumerate(pages):
        html, log = perturb_html(page.html, specs, i)
        rel = f"pages/{i:05d}.html"
        (out / rel).write_bytes(html)
        records.append({"html_path": rel, "domain": page.domain, "label": page.label, "source": page.source})
        logs.append(log)
    path = out / manifest
    write_manifest(path, records)
    return path, logs
