"""Synthetic two-family corpus.

Benign-like templates are deep and heterogeneous (many container and
inline tag types, varied attributes, realistic short domains). Kit-like
templates are shallow, repetitive and form-heavy with long noisy domains.
Templates alternate between the two families. A page is its template's
skeleton with per-page noise: each element is dropped or duplicated with
probability ``noise``, so ``noise = 0`` yields DOM-isomorphic pages.
This is a desk-scale stand-in for real crawled data, not a substitute.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dom import Element, serialize, write_manifest

BENIGN, PHISHING = 0, 1  # external labels

WORDS = ("news", "garden", "cloud", "river", "studio", "market", "open", "daily", "craft", "north",
         "atlas", "pixel", "harbor", "maple", "summit", "orbit", "civic", "lumen", "forge", "metro")
TLDS = ("com", "org", "net", "io", "edu", "co.uk", "de")
BRANDS = ("paypa1", "app1e", "micros0ft", "netfIix", "amaz0n", "wellsfarg0", "chase", "dhl", "office365", "icloud")
KIT_WORDS = ("secure", "login", "verify", "account", "update", "signin", "support", "billing", "auth", "confirm")
KIT_TLDS = ("xyz", "top", "info", "online", "site", "club", "live")
ALNUM = "abcdefghijklmnopqrstuvwxyz0123456789"

BLOCKS = ("div", "section", "article", "nav", "header", "footer", "main", "aside", "ul", "p", "table", "figure", "blockquote")
INLINE = ("span", "a", "strong", "em", "img", "code", "small", "abbr", "time", "b", "i")
GLOBAL_ATTRS = ("class", "id", "title", "lang", "role", "style", "data-id")


@dataclass
class Node:
    tag: str
    attrs: list[str] = field(default_factory=list)
    children: list["Node"] = field(default_factory=list)

    def size(self) -> int:
        return 1 + len(self.attrs) + sum(c.size() for c in self.children)


def _pick(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


def _attrs(rng, tag: str, k: int) -> list[str]:
    own = {"a": ["href", "target", "rel"], "img": ["src", "alt", "width", "height", "loading"],
           "time": ["datetime"], "abbr": ["title"], "td": ["colspan"], "th": ["scope"],
           "input": ["type", "name", "placeholder", "required", "autocomplete"],
           "form": ["action", "method"], "button": ["type"], "label": ["for"], "meta": ["name", "content"],
           "link": ["rel", "href"], "script": ["src"], "select": ["name"], "option": ["value"]}.get(tag, [])
    pool = list(dict.fromkeys(own + list(GLOBAL_ATTRS)))
    k = min(k, len(pool))
    return sorted(rng.choice(pool, size=k, replace=False).tolist()) if k else []


# ---------------------------------------------------------------------------
# families


def _inline(rng, depth: int, inside_a: bool = False) -> Node:
    tag = _pick(rng, INLINE)
    while inside_a and tag == "a":
        tag = _pick(rng, INLINE)
    node = Node(tag, _attrs(rng, tag, int(rng.integers(0, 3))))
    if tag != "img" and depth > 0 and rng.random() < 0.3:
        node.children.append(_inline(rng, depth - 1, inside_a or tag == "a"))
    return node


def _block(rng, depth: int) -> Node:
    tag = _pick(rng, BLOCKS) if depth > 0 else "p"
    node = Node(tag, _attrs(rng, tag, int(rng.integers(0, 3))))
    if tag == "ul":
        for _ in range(int(rng.integers(2, 5))):
            li = Node("li", _attrs(rng, "li", int(rng.integers(0, 2))))
            li.children.append(_inline(rng, 1) if depth <= 1 else _block(rng, depth - 1))
            node.children.append(li)
    elif tag == "table":
        body = Node("tbody")
        for _ in range(int(rng.integers(1, 4))):
            tr = Node("tr")
            for _ in range(int(rng.integers(1, 4))):
                tr.children.append(Node("td", _attrs(rng, "td", int(rng.integers(0, 2))), [_inline(rng, 1)]))
            body.children.append(tr)
        node.children.append(body)
    elif tag in ("p", "blockquote"):
        for _ in range(int(rng.integers(1, 4))):
            node.children.append(_inline(rng, 2))
    elif tag == "figure":
        node.children += [Node("img", _attrs(rng, "img", 3)), Node("figcaption", [], [_inline(rng, 1)])]
    else:
        for _ in range(int(rng.integers(1, 4))):
            node.children.append(_block(rng, depth - 1) if rng.random() < 0.75 else _inline(rng, 1))
    return node


def _head(rng, rich: bool) -> Node:
    head = Node("head", [], [Node("meta", ["charset"]), Node("title")])
    if rich:
        for _ in range(int(rng.integers(2, 6))):
            tag = _pick(rng, ("meta", "link", "script", "style"))
            head.children.append(Node(tag, _attrs(rng, tag, 2) if tag != "style" else []))
    return head


def benign_template(rng: np.random.Generator, target: int | None = None, overlap: float = 0.0) -> Node:
    body = Node("body", _attrs(rng, "body", int(rng.integers(0, 2))))
    html = Node("html", ["lang"], [_head(rng, True), body])
    if rng.random() < overlap:
        # a genuine sign-in page: same form vocabulary as the kits
        body.children.append(Node("div", ["class"], [_login_form(rng)]))
    while True:
        # shallower blocks when sizing to a target keep the overshoot small
        body.children.append(_block(rng, int(rng.integers(3, 7)) if target is None else int(rng.integers(2, 4))))
        size = html.size()
        if target is None and len(body.children) >= int(rng.integers(3, 6)):
            break
        if target is not None and size >= target:
            break
    return html


def _field(rng) -> Node:
    name = _pick(rng, ("email", "password", "text", "tel"))
    wrap = Node("div", ["class"])
    wrap.children.append(Node("label", ["for"]))
    wrap.children.append(Node("input", ["type", "name", "placeholder", "required"][: 2 + int(rng.integers(0, 3))]))
    if name == "password" and rng.random() < 0.5:
        wrap.children.append(Node("span", ["class"]))
    return wrap


def _login_form(rng) -> Node:
    form = Node("form", ["action", "method"] + (["id"] if rng.random() < 0.5 else []))
    form.children.append(Node("img", ["src", "alt"]))
    form.children.append(Node("h2" if rng.random() < 0.5 else "h3"))
    for _ in range(int(rng.integers(2, 5))):
        form.children.append(_field(rng))
    form.children.append(Node("button", ["type", "class"]))
    if rng.random() < 0.5:
        form.children.append(Node("a", ["href"]))
    return form


def kit_template(rng: np.random.Generator, target: int | None = None, overlap: float = 0.0) -> Node:
    if rng.random() < overlap / 2:
        # a cloned copy of the imitated site with the credential form spliced in
        html = benign_template(rng, target)
        body = html.children[1]
        body.children.insert(int(rng.integers(len(body.children) + 1)), Node("div", ["class"], [_login_form(rng)]))
        return html
    form = _login_form(rng)
    container = Node("div", ["class", "id"], [form])
    body = Node("body", [], [container])
    html = Node("html", [], [_head(rng, rng.random() < overlap), body])
    if rng.random() < 0.5:
        container.children.insert(0, Node("div", ["class"], [Node("img", ["src"])]))
    if rng.random() < overlap:
        # cloned decoration from the imitated site
        body.children.insert(0, _block(rng, 2))
        body.children.append(_block(rng, 2))
    while target is not None and html.size() < target:
        form.children.append(_field(rng))
    return html


def benign_domain(rng) -> str:
    parts = [_pick(rng, WORDS)]
    if rng.random() < 0.5:
        parts.append(_pick(rng, WORDS))
    sep = "-" if rng.random() < 0.3 else ""
    return sep.join(parts) + "." + _pick(rng, TLDS)


def kit_domain(rng) -> str:
    noise = "".join(_pick(rng, ALNUM) for _ in range(int(rng.integers(6, 14))))
    words = [_pick(rng, BRANDS), _pick(rng, KIT_WORDS), _pick(rng, KIT_WORDS), noise]
    host = "".join(_pick(rng, ALNUM) for _ in range(int(rng.integers(4, 9))))
    return "-".join(words) + "." + host + "." + _pick(rng, KIT_TLDS)


# ---------------------------------------------------------------------------
# pages


def jitter(node: Node, rng: np.random.Generator, noise: float, max_size: int | None = None) -> Node:
    """Copy of ``node`` with each non-root element dropped or duplicated with probability ``noise``.

    Subtrees larger than ``max_size`` nodes are never dropped or duplicated
    themselves (their descendants still are), which keeps sized pages near
    their target.
    """
    out = Node(node.tag, list(node.attrs))
    for child in node.children:
        fixed = child.tag in ("head", "body", "tbody", "tr") or (max_size is not None and child.size() > max_size)
        if noise > 0 and not fixed and rng.random() < noise:
            if rng.random() < 0.5:
                continue
            out.children.append(jitter(child, rng, noise, max_size))
        out.children.append(jitter(child, rng, noise, max_size))
    return out


def render(node: Node, rng: np.random.Generator) -> Element:
    el = Element(node.tag, [(a, _value(rng, a)) for a in node.attrs])
    for child in node.children:
        el.append(render(child, rng))
    if node.tag in ("p", "span", "a", "label", "h2", "h3", "li", "td", "button", "title", "strong", "em") and rng.random() < 0.8:
        el.children.insert(0, " ".join(_pick(rng, WORDS) for _ in range(int(rng.integers(1, 6)))))
    return el


def _value(rng, attr: str) -> str | None:
    if attr in ("required", "disabled"):
        return None
    if attr in ("href", "src", "action"):
        return "/" + "/".join(_pick(rng, WORDS) for _ in range(int(rng.integers(1, 3))))
    return _pick(rng, WORDS) + str(int(rng.integers(100)))


@dataclass
class SynthPage:
    html: bytes
    domain: str
    label: int
    template: int


def make_templates(n_templates: int, seed: int, target_nodes: int | None = None,
                   overlap: float = 0.0) -> list[tuple[int, Node]]:
    """Templates alternate benign-like (even ids) and kit-like (odd ids)."""
    out = []
    for t in range(n_templates):
        rng = np.random.default_rng([seed, t])
        label = BENIGN if t % 2 == 0 else PHISHING
        maker = benign_template if label == BENIGN else kit_template
        out.append((label, maker(rng, target_nodes, overlap)))
    return out


def make_page(template_id: int, label: int, skeleton: Node, index: int, noise: float, seed: int,
              overlap: float = 0.0, target_nodes: int | None = None) -> SynthPage:
    rng = np.random.default_rng([seed, template_id, index, 1])
    tree = jitter(skeleton, rng, noise, None if target_nodes is None else max(10, target_nodes // 10))
    html = serialize(render(tree, rng))
    # with probability overlap/4 a page borrows the other family's domain style
    swap = rng.random() < overlap / 4
    domain = benign_domain(rng) if (label == BENIGN) != swap else kit_domain(rng)
    return SynthPage(html, domain, label, template_id)


def _check(noise: float, overlap: float) -> None:
    if not 0 <= noise <= 1:
        raise ValueError("noise must lie in [0, 1]")
    if not 0 <= overlap <= 1:
        raise ValueError("overlap must lie in [0, 1]")


def generate(n_templates: int = 2, pages_per_template: int = 10, noise: float = 0.1, seed: int = 0,
             target_nodes: int | None = None, overlap: float = 0.0) -> list[SynthPage]:
    _check(noise, overlap)
    templates = make_templates(n_templates, seed, target_nodes, overlap)
    return [make_page(t, label, skel, i, noise, seed, overlap, target_nodes)
            for t, (label, skel) in enumerate(templates) for i in range(pages_per_template)]


def generate_split(per_class: Sequence[int], n_templates: int = 20, noise: float = 0.1, seed: int = 0,
                   target_nodes: int | None = None, overlap: float = 0.0) -> dict[str, list[SynthPage]]:
    """Per-class counts for (train, val, test); pages cycle through their family's templates."""
    _check(noise, overlap)
    names = ("train", "val", "test")[: len(per_class)]
    total = sum(per_class)
    templates = make_templates(max(2, n_templates), seed, target_nodes, overlap)
    splits: dict[str, list[SynthPage]] = {n: [] for n in names}
    for label in (BENIGN, PHISHING):
        family = [(t, skel) for t, (lab, skel) in enumerate(templates) if lab == label]
        pages = [make_page(family[i % len(family)][0], label, family[i % len(family)][1], i // len(family),
                           noise, seed, overlap, target_nodes)
                 for i in range(total)]
        order = np.random.default_rng([seed, label, 7]).permutation(total)
        start = 0
        for name, count in zip(names, per_class):
            splits[name] += [pages[j] for j in order[start:start + count]]
            start += count
    return splits


def write_corpus(out_dir: str | Path, pages: Sequence[SynthPage], manifest: str = "manifest.jsonl",
                 subdir: str = "pages") -> Path:
    out = Path(out_dir)
    (out / subdir).mkdir(parents=True, exist_ok=True)
    records = []
    for i, page in enumerate(pages):
        rel = f"{subdir}/{i:05d}.html"
        (out / rel).write_bytes(page.html)
        records.append({"html_path": rel, "domain": page.domain, "label": page.label, "template": page.template})
    path = out / manifest
    write_manifest(path, records)
    return path
