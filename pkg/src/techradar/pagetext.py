"""HTML to zoned paragraphs.

Pages are parsed leniently into a small element tree, then block-level
candidates (p, li, h1-h6, td, div) that contain no nested block candidate
emit one paragraph each. A paragraph's zone comes from its nearest marked
ancestor: structural tags (nav/header/footer/aside) and class/id tokens
(nav, menu, footer, header, breadcrumb, cookie, signature) mark regions
as boilerplate; script/style content is never emitted.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from html.parser import HTMLParser
from typing import Optional

log = logging.getLogger(__name__)


class Zone(str, Enum):
    CONTENT = "Content"
    MENU = "Menu"
    HEADER = "Header"
    FOOTER = "Footer"
    SIGNATURE = "Signature"
    SCRIPT = "Script"
    OTHER = "Other"


@dataclass(frozen=True)
class Paragraph:
    page_url: str
    zone: Zone
    text: str
    ordinal: int


_VOID_TAGS = {
    "area", "base", "br", "col", "embed", "hr", "img", "input",
    "link", "meta", "param", "source", "track", "wbr",
}
# start tags that implicitly close an open <p> (HTML5 omission rules)
_P_CLOSERS = {
    "address", "article", "aside", "blockquote", "details", "dialog",
    "dd", "div", "dl", "dt", "fieldset", "figcaption", "figure", "footer",
    "form", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hgroup", "hr",
    "main", "menu", "nav", "ol", "p", "pre", "section", "table", "ul",
}
_BLOCK_CANDIDATES = {"p", "li", "h1", "h2", "h3", "h4", "h5", "h6", "td", "div"}
_RAW_TEXT_TAGS = {"script", "style"}

# tag -> zone for structural boilerplate containers
_TAG_ZONES = {
    "nav": Zone.MENU,
    "header": Zone.HEADER,
    "footer": Zone.FOOTER,
    "aside": Zone.OTHER,
}
# class/id token -> zone; checked as substrings of the attribute value
_ATTR_ZONES = (
    ("breadcrumb", Zone.MENU),
    ("menu", Zone.MENU),
    ("nav", Zone.MENU),
    ("footer", Zone.FOOTER),
    ("header", Zone.HEADER),
    ("cookie", Zone.OTHER),
    ("signature", Zone.SIGNATURE),
)

_WS_RE = re.compile(r"\s+")


@dataclass
class _Node:
    tag: str
    zone: Optional[Zone]
    parent: Optional["_Node"]
    children: list = field(default_factory=list)  # _Node or str

    def effective_zone(self) -> Zone:
        node: Optional[_Node] = self
        while node is not None:
            if node.zone is not None:
                return node.zone
            node = node.parent
        return Zone.CONTENT


def _zone_for(tag: str, attrs: list[tuple[str, Optional[str]]]) -> Optional[Zone]:
    if tag in _RAW_TEXT_TAGS:
        return Zone.SCRIPT
    blob = " ".join(
        (v or "").lower() for k, v in attrs if k in ("class", "id")
    )
    if blob:
        for token, zone in _ATTR_ZONES:
            if token in blob:
                return zone
    return _TAG_ZONES.get(tag)


class _TreeBuilder(HTMLParser):
    """Lenient tree builder: unmatched end tags are ignored, <p>/<li>
    auto-close their previous sibling, void tags never open scope."""

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.root = _Node("#root", None, None)
        self.stack: list[_Node] = [self.root]

    def handle_starttag(self, tag: str, attrs) -> None:
        tag = tag.lower()
        if tag in _P_CLOSERS and self.stack[-1].tag == "p":
            self.stack.pop()
        elif tag == "li" and self.stack[-1].tag == "li":
            self.stack.pop()
        node = _Node(tag, _zone_for(tag, attrs), self.stack[-1])
        self.stack[-1].children.append(node)
        if tag not in _VOID_TAGS:
            self.stack.append(node)

    def handle_startendtag(self, tag: str, attrs) -> None:
        tag = tag.lower()
        node = _Node(tag, _zone_for(tag, attrs), self.stack[-1])
        self.stack[-1].children.append(node)

    def handle_endtag(self, tag: str) -> None:
        tag = tag.lower()
        for i in range(len(self.stack) - 1, 0, -1):
            if self.stack[i].tag == tag:
                del self.stack[i:]
                return
        # no matching open tag: ignore

    def handle_data(self, data: str) -> None:
        if data:
            self.stack[-1].children.append(data)


def _collect_text(node: _Node, parts: list[str]) -> None:
    for child in node.children:
        if isinstance(child, str):
            parts.append(child)
        elif child.tag not in _RAW_TEXT_TAGS:
            _collect_text(child, parts)


def _has_block_descendant(node: _Node) -> bool:
    for child in node.children:
        if isinstance(child, _Node):
            if child.tag in _BLOCK_CANDIDATES or _has_block_descendant(child):
                return True
    return False


def normalize_ws(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def extract_paragraphs(body: str, page_url: str) -> list[Paragraph]:
    """Parse HTML and emit zoned paragraphs in document order.

    Ordinals are strictly increasing per page; empty-after-normalization
    blocks are skipped. An unparseable body yields an empty list.
    """
    if not isinstance(body, str):
        log.warning("page %s: body is not text, skipping", page_url)
        return []
    builder = _TreeBuilder()
    try:
        builder.feed(body)
        builder.close()
    except Exception as exc:
        log.warning("page %s: unparseable HTML (%s), skipping", page_url, exc)
        return []

    paragraphs: list[Paragraph] = []

    def walk(node: _Node) -> None:
        for child in node.children:
            if not isinstance(child, _Node):
                continue
            if child.tag in _RAW_TEXT_TAGS:
                continue
            if child.tag in _BLOCK_CANDIDATES and not _has_block_descendant(child):
                parts: list[str] = []
                _collect_text(child, parts)
                text = normalize_ws("".join(parts))
                if text:
                    paragraphs.append(
                        Paragraph(
                            page_url=page_url,
                            zone=child.effective_zone(),
                            text=text,
                            ordinal=len(paragraphs),
                        )
                    )
                continue
            walk(child)

    walk(builder.root)
    return paragraphs
