"""HTML ingestion: raw bytes + domain name -> structural DOM tree.

Parsing happens in two layers. :class:`TreeBuilder` drives the stdlib
tokenizer and applies a subset of the WHATWG tree-construction recovery
rules (implied ``html``/``body``, implied end tags, scope-limited end tags,
implied ``tbody``/``tr``), producing a content-preserving :class:`Element`
tree. :func:`parse_html` then reduces that tree to a :class:`DomTree` holding
only tag and attribute names; text and attribute values never leave the
builder.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DuplicateDomain, FileMissing, IoFailure, MissingDomain, OversizeDocument

log = logging.getLogger(__name__)

DEFAULT_MAX_NODES = 200_000

VOID = frozenset(
    "area base basefont bgsound br col embed frame hr img input keygen link meta param source track wbr".split()
)
RAW_TEXT = frozenset("script style title textarea xmp iframe noembed noframes".split())
HEAD_CONTENT = frozenset("base basefont bgsound link meta noframes script style template title".split())
CLOSES_P = frozenset(
    "address article aside blockquote center details dialog dir div dl fieldset figcaption figure footer form "
    "h1 h2 h3 h4 h5 h6 header hgroup hr listing main menu nav ol p pre search section summary table ul xmp".split()
)
HEADINGS = frozenset("h1 h2 h3 h4 h5 h6".split())
SPECIAL = frozenset(
    "address applet area article aside base basefont bgsound blockquote body br button caption center col "
    "colgroup dd details dir div dl dt embed fieldset figcaption figure footer form frame frameset h1 h2 h3 "
    "h4 h5 h6 head header hgroup hr html iframe img input keygen li link listing main marquee menu meta nav "
    "noembed noframes noscript object ol p param plaintext pre script search section select source style "
    "summary table tbody td template textarea tfoot th thead title tr track ul wbr xmp".split()
)
BLOCK_END = frozenset(
    "address article aside blockquote button center details dialog dir div dl fieldset figcaption figure "
    "footer header hgroup listing main menu nav ol pre search section summary ul".split()
)
SCOPE_MARKERS = frozenset("applet caption html table td th marquee object template".split())
TABLE_SECTIONS = frozenset("tbody thead tfoot".split())
FORMATTING = frozenset("a b big code em font i nobr s small strike strong tt u".split())
MARKER_ELEMENTS = frozenset("applet object marquee td th caption template".split())
NO_RECONSTRUCT = CLOSES_P | frozenset(
    "li dd dt table caption colgroup col tbody thead tfoot tr td th iframe noembed noframes hr".split()
)
IMPLIED_END = frozenset("dd dt li optgroup option p rb rp rt rtc".split())
WHITESPACE = " \t\n\f\r"


class NodeKind(str, Enum):
    TAG = "tag"
    ATTR = "attr"
    DOMAIN = "domain"


def normalize_token(name: str) -> str:
    """Lowercase ASCII; every non-ASCII byte of the UTF-8 form becomes ``%xx``."""
    raw = name.encode("utf-8", "surrogateescape")
    out = []
    for b in raw:
        if b < 0x80:
            out.append(chr(b).lower())
        else:
            out.append(f"%{b:02x}")
    return "".join(out)


# ---------------------------------------------------------------------------
# content tree


@dataclass(eq=False)
class Element:
    """Content-preserving element used by the builder and the perturbation tools."""

    tag: str
    attrs: list[tuple[str, str | None]] = field(default_factory=list)
    children: list["Element | str"] = field(default_factory=list)
    parent: "Element | None" = field(default=None, repr=False)

    def append(self, node: "Element | str") -> None:
        if isinstance(node, str):
            if self.children and isinstance(self.children[-1], str):
                self.children[-1] += node
                return
        else:
            node.parent = self
        self.children.append(node)

    def detach(self) -> None:
        if self.parent is not None:
            self.parent.children.remove(self)
            self.parent = None

    def clone(self) -> "Element":
        return Element(self.tag, list(self.attrs))

    def elements(self) -> list["Element"]:
        return [c for c in self.children if isinstance(c, Element)]

    def iter(self) -> Iterator["Element"]:
        stack = [self]
        while stack:
            el = stack.pop()
            yield el
            stack.extend(reversed(el.elements()))


class TreeBuilder(HTMLParser):
    """Tolerant tree constructor over the stdlib tokenizer.

    Implements implied html/head/body, implied end tags, scoped end tags,
    the active-formatting-element machinery (reconstruction and the adoption
    agency algorithm), select-mode filtering and implied tbody/tr. Table
    foster parenting is not implemented: misplaced content inside tables
    stays where it appears.
    """

    def __init__(self, max_nodes: int = DEFAULT_MAX_NODES):
        super().__init__(convert_charrefs=True)
        self.max_nodes = max_nodes
        self.count = 1
        self.root = Element("html")
        self.head: Element | None = None
        self.body: Element | None = None
        self.stack: list[Element] = [self.root]
        self.active: list[Element | None] = []  # None is a scope marker
        self.form: Element | None = None

    # -- helpers -----------------------------------------------------------
    @property
    def current(self) -> Element:
        return self.stack[-1]

    def _bump(self, n: int) -> None:
        self.count += n
        if self.count > self.max_nodes:
            raise OversizeDocument(f"document exceeds {self.max_nodes} nodes")

    @staticmethod
    def _dedup(attrs: Sequence[tuple[str, str | None]]) -> list[tuple[str, str | None]]:
        seen: set[str] = set()
        out = []
        for name, value in attrs:
            if not name or name in seen:
                continue
            seen.add(name)
            out.append((name, value))
        return out

    def _merge_attrs(self, el: Element, attrs) -> None:
        have = {n for n, _ in el.attrs}
        for name, value in self._dedup(attrs):
            if name not in have:
                self._bump(1)
                el.attrs.append((name, value))

    def _insert(self, tag: str, attrs, push: bool = True) -> Element:
        attrs = self._dedup(attrs)
        self._bump(1 + len(attrs))
        el = Element(tag, attrs)
        self.current.append(el)
        if push:
            self.stack.append(el)
        return el

    def _clone(self, el: Element) -> Element:
        self._bump(1 + len(el.attrs))
        return el.clone()

    def _in_scope(self, names, extra=frozenset()) -> int:
        """Stack index of the innermost element named in ``names`` within scope, or -1."""
        for i in range(len(self.stack) - 1, -1, -1):
            tag = self.stack[i].tag
            if tag in names:
                return i
            if tag in SCOPE_MARKERS or tag in extra:
                return -1
        return -1

    def _in_table_scope(self, names) -> int:
        for i in range(len(self.stack) - 1, -1, -1):
            tag = self.stack[i].tag
            if tag in names:
                return i
            if tag in ("html", "table", "template"):
                return -1
        return -1

    def _index_of(self, tag: str) -> int:
        for i in range(len(self.stack) - 1, 0, -1):
            if self.stack[i].tag == tag:
                return i
        return -1

    def _pop_to(self, index: int) -> None:
        index = max(index, 1)
        for el in self.stack[index:]:
            if el.tag in MARKER_ELEMENTS:
                self._clear_to_marker()
        del self.stack[index:]

    def _close_p(self) -> None:
        i = self._in_scope(("p",), extra=frozenset(("button",)))
        if i >= 0:
            self._pop_to(i)

    def _ensure_body(self) -> None:
        if self.body is None:
            del self.stack[1:]
            self._bump(1)
            self.body = Element("body")
            self.root.append(self.body)
            self.stack.append(self.body)

    def _foreign(self) -> bool:
        return any(el.tag in ("svg", "math") for el in self.stack[2:])

    def _select_index(self) -> int:
        for i in range(len(self.stack) - 1, 0, -1):
            tag = self.stack[i].tag
            if tag == "select":
                return i
            if tag in ("table", "template"):
                return -1
        return -1

    # -- active formatting elements ---------------------------------------
    def _clear_to_marker(self) -> None:
        while self.active:
            if self.active.pop() is None:
                break

    def _push_active(self, el: Element) -> None:
        same = []
        for entry in reversed(self.active):
            if entry is None:
                break
            if entry.tag == el.tag and entry.attrs == el.attrs:
                same.append(entry)
        if len(same) >= 3:
            self.active.remove(same[-1])
        self.active.append(el)

    def _last_active(self, tag: str) -> Element | None:
        for entry in reversed(self.active):
            if entry is None:
                return None
            if entry.tag == tag:
                return entry
        return None

    def _reconstruct(self) -> None:
        if not self.active:
            return
        last = self.active[-1]
        if last is None or any(last is el for el in self.stack):
            return
        i = len(self.active) - 1
        while i > 0:
            prev = self.active[i - 1]
            if prev is None or any(prev is el for el in self.stack):
                break
            i -= 1
        for j in range(i, len(self.active)):
            clone = self._clone(self.active[j])
            self.current.append(clone)
            self.stack.append(clone)
            self.active[j] = clone

    def _stack_pos(self, el: Element) -> int:
        for i in range(len(self.stack) - 1, -1, -1):
            if self.stack[i] is el:
                return i
        return -1

    def _active_pos(self, el: Element) -> int:
        for i, entry in enumerate(self.active):
            if entry is el:
                return i
        return -1

    def _adoption_agency(self, tag: str) -> None:
        if self.current.tag == tag and self._active_pos(self.current) < 0:
            self.stack.pop()
            return
        for _ in range(8):
            fmt = self._last_active(tag)
            if fmt is None:
                self._any_other_end(tag)
                return
            fpos = self._stack_pos(fmt)
            if fpos < 0:
                self.active.remove(fmt)
                return
            if self._in_scope((tag,)) < 0 or self._in_scope_element(fmt) < 0:
                return
            furthest = None
            for el in self.stack[fpos + 1:]:
                if el.tag in SPECIAL:
                    furthest = el
                    break
            if furthest is None:
                del self.stack[fpos:]
                self.active.remove(fmt)
                return
            common = self.stack[fpos - 1]
            bookmark = self._active_pos(fmt)
            node = last = furthest
            node_index = self._stack_pos(furthest)
            inner = 0
            while True:
                inner += 1
                node_index -= 1
                node = self.stack[node_index]
                if node is fmt:
                    break
                apos = self._active_pos(node)
                if inner > 3 and apos >= 0:
                    self.active.pop(apos)
                    if apos < bookmark:
                        bookmark -= 1
                    apos = -1
                if apos < 0:
                    del self.stack[node_index]
                    continue
                clone = self._clone(node)
                self.active[apos] = clone
                self.stack[node_index] = clone
                node = clone
                if last is furthest:
                    bookmark = apos + 1
                last.detach()
                node.append(last)
                last = node
            last.detach()
            common.append(last)
            new = self._clone(fmt)
            for child in furthest.children:
                if isinstance(child, Element):
                    child.parent = new
            new.children = furthest.children
            furthest.children = []
            furthest.append(new)
            fa = self._active_pos(fmt)
            self.active.insert(bookmark, new)
            if fa >= bookmark:
                fa += 1
            self.active.pop(fa)
            self.stack.remove(fmt)
            self.stack.insert(self._stack_pos(furthest) + 1, new)

    def _in_scope_element(self, target: Element) -> int:
        for i in range(len(self.stack) - 1, -1, -1):
            el = self.stack[i]
            if el is target:
                return i
            if el.tag in SCOPE_MARKERS:
                return -1
        return -1

    # -- tokenizer callbacks ----------------------------------------------
    def handle_starttag(self, tag, attrs):
        self._start(tag, attrs, self_closing=False)

    def handle_startendtag(self, tag, attrs):
        self._start(tag, attrs, self_closing=True)

    def _start(self, tag: str, attrs, self_closing: bool) -> None:
        if tag == "html":
            self._merge_attrs(self.root, attrs)
            return
        if tag == "head":
            if self.head is None and self.body is None:
                self.head = self._insert("head", attrs)
            return
        if tag == "body":
            if self.body is None:
                del self.stack[1:]
                self.body = self._insert("body", attrs)
            else:
                self._merge_attrs(self.body, attrs)
            return
        if self.body is None:
            if tag in HEAD_CONTENT:
                if self.head is None:
                    self.head = self._insert("head", [])
                elif not any(el is self.head for el in self.stack):
                    self.stack.append(self.head)
                self._insert(tag, attrs, push=tag not in VOID)
                if tag in RAW_TEXT:
                    self.set_cdata_mode(tag)
                return
            self._ensure_body()

        if self._foreign():
            self._insert(tag, attrs, push=not self_closing and tag not in VOID)
            return

        s = self._select_index()
        if s > 0:
            if tag == "option":
                if self.current.tag == "option":
                    self.stack.pop()
            elif tag == "optgroup":
                if self.current.tag == "option":
                    self.stack.pop()
                if self.current.tag == "optgroup":
                    self.stack.pop()
            elif tag == "hr":
                if self.current.tag == "option":
                    self.stack.pop()
                if self.current.tag == "optgroup":
                    self.stack.pop()
            elif tag == "select":
                self._pop_to(s)
                return
            elif tag in ("input", "keygen", "textarea"):
                self._pop_to(s)
            elif tag not in ("script", "template", "style"):
                return
            if tag in ("option", "optgroup", "hr", "script", "template", "style"):
                self._insert(tag, attrs, push=tag not in VOID)
                if tag in RAW_TEXT:
                    self.set_cdata_mode(tag)
                return

        cur = self.current.tag
        if tag == "form" and self.form is not None:
            return
        if tag in CLOSES_P:
            self._close_p()
            if tag in HEADINGS and self.current.tag in HEADINGS:
                self.stack.pop()
        elif tag == "li" or tag in ("dd", "dt"):
            targets = ("li",) if tag == "li" else ("dd", "dt")
            for i in range(len(self.stack) - 1, 0, -1):
                t = self.stack[i].tag
                if t in targets:
                    self._pop_to(i)
                    break
                if t in SPECIAL and t not in ("address", "div", "p"):
                    break
            self._close_p()
        elif tag == "button":
            i = self._in_scope(("button",))
            if i >= 0:
                self._pop_to(i)
        elif tag == "a":
            prev = self._last_active("a")
            if prev is not None:
                self._adoption_agency("a")
                if self._active_pos(prev) >= 0:
                    self.active.remove(prev)
                pos = self._stack_pos(prev)
                if pos >= 0:
                    del self.stack[pos]
        elif tag == "nobr":
            self._reconstruct()
            if self._in_scope(("nobr",)) >= 0:
                self._adoption_agency("nobr")
        elif tag in ("option", "optgroup"):
            if cur == "option":
                self.stack.pop()
        elif tag in TABLE_SECTIONS or tag in ("caption", "colgroup"):
            i = self._in_table_scope(("table",))
            if i >= 0 and cur != "table":
                self._pop_to(i + 1)
        elif tag == "tr":
            i = self._in_table_scope(("table",))
            if i >= 0:
                j = self._in_table_scope(TABLE_SECTIONS)
                if j > i:
                    self._pop_to(j + 1)
                else:
                    self._pop_to(i + 1)
                    self._insert("tbody", [])
        elif tag in ("td", "th"):
            i = self._in_table_scope(("table",))
            if i >= 0:
                j = self._in_table_scope(("tr",))
                if j > i:
                    self._pop_to(j + 1)
                else:
                    k = self._in_table_scope(TABLE_SECTIONS)
                    if k > i:
                        self._pop_to(k + 1)
                    else:
                        self._pop_to(i + 1)
                        self._insert("tbody", [])
                    self._insert("tr", [])
        elif tag == "col":
            if cur == "table":
                self._insert("colgroup", [])

        if tag not in NO_RECONSTRUCT:
            self._reconstruct()
        el = self._insert(tag, attrs, push=tag not in VOID)
        if tag == "form":
            self.form = el
        if tag in FORMATTING:
            self._push_active(el)
        elif tag in MARKER_ELEMENTS:
            self.active.append(None)
        if tag in RAW_TEXT and tag not in VOID:
            self.set_cdata_mode(tag)

    def handle_endtag(self, tag):
        if tag in ("html", "body"):
            return
        if tag == "head":
            if self.head is not None:
                pos = self._stack_pos(self.head)
                if pos > 0:
                    del self.stack[pos:]
            return
        if self.body is None:
            i = self._index_of(tag)
            if i > 0:
                self._pop_to(i)
            elif tag == "br":
                self._ensure_body()
                self._end_in_body(tag)
            return
        self._end_in_body(tag)

    def _end_in_body(self, tag: str) -> None:
        if self._foreign():
            i = self._index_of(tag)
            if i > 0:
                self._pop_to(i)
            return
        s = self._select_index()
        if s > 0:
            if tag == "select":
                self._pop_to(s)
            elif tag in ("option", "optgroup") and self.current.tag == tag:
                self.stack.pop()
            elif tag == "optgroup" and self.current.tag == "option" and self.stack[-2].tag == "optgroup":
                del self.stack[-2:]
            elif tag in ("script", "style", "template") and self.current.tag == tag:
                self.stack.pop()
            return
        if tag == "p":
            i = self._in_scope(("p",), extra=frozenset(("button",)))
            if i >= 0:
                self._pop_to(i)
            else:
                self._insert("p", [], push=False)
        elif tag == "br":
            self._reconstruct()
            self._insert("br", [], push=False)
        elif tag == "li":
            i = self._in_scope(("li",), extra=frozenset(("ol", "ul")))
            if i >= 0:
                self._pop_to(i)
        elif tag in HEADINGS:
            i = self._in_scope(HEADINGS)
            if i >= 0:
                self._pop_to(i)
        elif tag in FORMATTING:
            self._adoption_agency(tag)
        elif tag in ("table", "tr", "td", "th", "caption", "colgroup") or tag in TABLE_SECTIONS:
            i = self._in_table_scope((tag,))
            if i >= 0:
                self._pop_to(i)
        elif tag == "form":
            node, self.form = self.form, None
            if node is not None and self._in_scope_element(node) >= 0:
                while self.current.tag in IMPLIED_END:
                    self.stack.pop()
                del self.stack[self._stack_pos(node)]
        elif tag in BLOCK_END or tag in ("dd", "dt", "applet", "marquee", "object"):
            i = self._in_scope((tag,))
            if i >= 0:
                self._pop_to(i)
        else:
            self._any_other_end(tag)

    def _any_other_end(self, tag: str) -> None:
        for i in range(len(self.stack) - 1, 0, -1):
            t = self.stack[i].tag
            if t == tag:
                self._pop_to(i)
                return
            if t in SPECIAL:
                return

    def handle_data(self, data):
        if not data:
            return
        if self.current.tag in RAW_TEXT:
            self.current.append(data)
            return
        if self.body is None:
            if data.strip(WHITESPACE) == "":
                self.current.append(data)
                return
            self._ensure_body()
        if self._select_index() < 0 and not self._foreign():
            self._reconstruct()
        self.current.append(data)

    # comments, doctypes and processing instructions carry no structure
    def handle_comment(self, data):
        pass

    def handle_decl(self, decl):
        pass

    def handle_pi(self, data):
        pass

    def unknown_decl(self, data):
        pass


def decode_html(html: bytes) -> str:
    return html.decode("utf-8", "surrogateescape")


def build_element_tree(html: bytes | str, max_nodes: int = DEFAULT_MAX_NODES) -> Element:
    """Parse markup tolerantly into a content-preserving element tree."""
    text = decode_html(html) if isinstance(html, (bytes, bytearray)) else html
    builder = TreeBuilder(max_nodes=max_nodes)
    try:
        builder.feed(text)
        builder.close()
    except OversizeDocument:
        raise
    except Exception as exc:  # tokenizer edge cases: keep what was built
        log.debug("tokenizer gave up early: %s", exc)
    return builder.root


def _escape(text: str, quote: bool = False) -> str:
    text = text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    return text.replace('"', "&quot;") if quote else text


def serialize(root: Element, doctype: bool = True) -> bytes:
    """Canonical markup for a content tree; raw-text element bodies are written verbatim."""
    out = ["<!DOCTYPE html>"] if doctype else []
    stack: list = [root]
    while stack:
        item = stack.pop()
        if isinstance(item, tuple):  # deferred end tag
            out.append(f"</{item[0]}>")
            continue
        if isinstance(item, str):
            out.append(item)
            continue
        attrs = "".join(f" {k}" if v is None else f' {k}="{_escape(v, True)}"' for k, v in item.attrs)
        out.append(f"<{item.tag}{attrs}>")
        if item.tag in VOID:
            continue
        stack.append((item.tag,))
        raw = item.tag in RAW_TEXT
        for child in reversed(item.children):
            stack.append(child if not isinstance(child, str) or raw else _escape(child))
    return "".join(out).encode("utf-8", "surrogateescape")


# ---------------------------------------------------------------------------
# structural tree


@dataclass
class DomNode:
    kind: NodeKind
    token: str
    children: list["DomNode"] = field(default_factory=list)


@dataclass(frozen=True)
class DomTree:
    """Rooted ordered tree in pre-order: every parent index precedes its children."""

    kinds: tuple[NodeKind, ...]
    tokens: tuple[str, ...]
    parent: tuple[int, ...]
    depth: tuple[int, ...]
    root: int = 0

    def __len__(self) -> int:
        return len(self.tokens)

    @cached_property
    def children(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.tokens]
        for v, p in enumerate(self.parent):
            if p >= 0:
                out[p].append(v)
        return out

    @cached_property
    def parent_array(self) -> np.ndarray:
        return np.asarray(self.parent, dtype=np.int64)

    @cached_property
    def depth_array(self) -> np.ndarray:
        return np.asarray(self.depth, dtype=np.int64)

    @property
    def has_domain(self) -> bool:
        return NodeKind.DOMAIN in self.kinds

    @property
    def domain(self) -> str | None:
        for k, t in zip(self.kinds, self.tokens):
            if k is NodeKind.DOMAIN:
                return t
        return None

    @classmethod
    def from_node(cls, root: DomNode) -> "DomTree":
        kinds, tokens, parent, depth = [], [], [], []
        stack: list[tuple[DomNode, int, int]] = [(root, -1, 0)]
        while stack:
            node, p, d = stack.pop()
            idx = len(tokens)
            kinds.append(node.kind)
            tokens.append(node.token)
            parent.append(p)
            depth.append(d)
            for child in reversed(node.children):
                stack.append((child, idx, d + 1))
        return cls(tuple(kinds), tuple(tokens), tuple(parent), tuple(depth))

    def to_node(self) -> DomNode:
        nodes = [DomNode(k, t) for k, t in zip(self.kinds, self.tokens)]
        for v, p in enumerate(self.parent):
            if p >= 0:
                nodes[p].children.append(nodes[v])
        return nodes[self.root]

    def without_domain(self) -> "DomTree":
        if not self.has_domain:
            return self
        root = self.to_node()
        root.children = [c for c in root.children if c.kind is not NodeKind.DOMAIN]
        return DomTree.from_node(root)

    def validate(self) -> None:
        """Raise AssertionError unless all tree invariants hold."""
        n = len(self.tokens)
        assert n >= 1 and self.parent[self.root] == -1
        assert sum(1 for p in self.parent if p == -1) == 1
        for v in range(n):
            p = self.parent[v]
            assert self.tokens[v], "empty token"
            if p >= 0:
                assert p < v, "not pre-ordered"
                assert self.depth[v] == self.depth[p] + 1
                assert self.kinds[p] is NodeKind.TAG, "only tags have children"
            else:
                assert self.depth[v] == 0


def decompose_node(tag: str, attributes: Sequence[str]) -> DomNode:
    """Tag node with one attribute child per distinct name, first occurrence kept."""
    seen: set[str] = set()
    children = []
    for name in attributes:
        if name in seen:
            continue
        seen.add(name)
        children.append(DomNode(NodeKind.ATTR, name))
    return DomNode(NodeKind.TAG, tag, children)


def element_to_node(el: Element) -> DomNode:
    root = decompose_node(normalize_token(el.tag), [normalize_token(n) for n, _ in el.attrs])
    stack = [(el, root)]
    while stack:
        src, dst = stack.pop()
        for child in src.elements():
            node = decompose_node(normalize_token(child.tag), [normalize_token(n) for n, _ in child.attrs])
            dst.children.append(node)
            stack.append((child, node))
    return root


def parse_html(html: bytes | str, max_nodes: int = DEFAULT_MAX_NODES) -> DomTree:
    """Parse raw markup into a tag/attribute tree; text and attribute values are dropped."""
    return DomTree.from_node(element_to_node(build_element_tree(html, max_nodes)))


def attach_domain_node(tree: DomTree, domain: str | None) -> DomTree:
    if domain is None or not domain.strip():
        raise MissingDomain("page has no domain but domain features are enabled")
    if tree.has_domain:
        raise DuplicateDomain("tree already carries a domain node")
    root = tree.to_node()
    root.children.insert(0, DomNode(NodeKind.DOMAIN, domain.strip().lower()))
    return DomTree.from_node(root)


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class RawPage:
    html: bytes
    domain: str | None = None
    label: int | None = None
    source: str = ""

    def __post_init__(self):
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.domain is not None and not self.domain.strip():
            raise ValueError("domain must be non-empty when present")


class ManifestReader:
    """Iterate a JSON-lines manifest.

    Yields :class:`RawPage` for readable entries and a :class:`FileMissing`
    instance (not raised) for entries whose HTML file cannot be read, so one
    bad path does not end the stream. Malformed lines are counted in
    ``skipped``.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.skipped = 0

    def __iter__(self) -> Iterator[RawPage | FileMissing]:
        try:
            fh = open(self.path, encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read manifest {self.path}: {exc}") from exc
        base = self.path.parent
        with fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    html_path = rec["html_path"]
                    if not isinstance(html_path, str):
                        raise TypeError("html_path must be a string")
                    domain = rec.get("domain")
                    label = rec.get("label")
                    if domain is not None and not isinstance(domain, str):
                        raise TypeError("domain must be a string or null")
                    if label is not None and (isinstance(label, bool) or label not in (0, 1)):
                        raise TypeError("label must be 0, 1 or null")
                    if domain is not None and not domain.strip():
                        raise ValueError("empty domain")
                except (ValueError, KeyError, TypeError) as exc:
                    self.skipped += 1
                    log.warning("%s:%d: skipping malformed line (%s)", self.path, lineno, exc)
                    continue
                file = Path(html_path)
                if not file.is_absolute():
                    file = base / file
                try:
                    html = file.read_bytes()
                except OSError:
                    yield FileMissing(f"{self.path}:{lineno}: cannot read {file}")
                    continue
                yield RawPage(html=html, domain=domain, label=label, source=str(html_path))


def load_manifest(path: str | Path) -> ManifestReader:
    return ManifestReader(path)


def read_pages(path: str | Path) -> list[RawPage]:
    """All readable pages of a manifest; unreadable entries are logged and dropped."""
    pages = []
    for item in load_manifest(path):
        if isinstance(item, FileMissing):
            log.warning("%s", item)
            continue
        pages.append(item)
    return pages


def write_manifest(path: str | Path, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
