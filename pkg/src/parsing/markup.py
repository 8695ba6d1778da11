# src/parsing/markup.py
"""
LaTeX / HTML / JATS → ParsedDocument.

Citation commands are first replaced by placeholders (CITE_OPEN occ CITE_CLOSE)
so sentence splitting sees them as ordinary tokens. Once every block is in
place and the bibliography numbering is known, placeholders are swapped for
their rendered surface form and each occurrence is recorded as an anchor.
"""

import re
from typing import Dict, List, Optional, Tuple

from bs4 import BeautifulSoup, NavigableString, Tag
from loguru import logger

from src.core.errors import ContractViolation, MarkupParseError
from src.core.models import BibEntry, BlockKind, CitationStyle, ParsedDocument
from src.core.text import collapse_ws
from src.parsing.bibliography import parse_bibtex, parse_reference_string
from src.parsing.document import DocumentBuilder, is_bibliography_heading
from src.parsing.segment import CITE_CLOSE, CITE_OPEN

_PLACEHOLDER = re.compile(CITE_OPEN + r"(\w+)" + CITE_CLOSE)


class _Anchors:
    """Citation occurrences in reading order."""

    def __init__(self):
        self.keys: Dict[str, List[str]] = {}
        self.narrative: Dict[str, bool] = {}
        self.element_text: Dict[str, str] = {}

    def add(self, keys: List[str], narrative: bool = False, text: str = "") -> str:
        occ = f"c{len(self.keys) + 1}"
        self.keys[occ] = keys
        self.narrative[occ] = narrative
        if text:
            self.element_text[occ] = text
        return f"{CITE_OPEN}{occ}{CITE_CLOSE}"

    def cited_order(self) -> List[str]:
        seen: List[str] = []
        for keys in self.keys.values():
            for k in keys:
                if k not in seen:
                    seen.append(k)
        return seen


# ---------------------------------------------------------
# SURFACE FORMS
# ---------------------------------------------------------

def _names(entry: BibEntry) -> str:
    fams = entry.family_names
    if not fams:
        return "Anonymous"
    if len(fams) == 1:
        return fams[0]
    if len(fams) == 2:
        return f"{fams[0]} & {fams[1]}"
    return f"{fams[0]} et al."


def render_surface(keys: List[str], entries: Dict[str, BibEntry], style: CitationStyle, narrative: bool) -> str:
    if style == CitationStyle.NUMERIC:
        nums = [str(entries[k].entry_index) if k in entries else "?" for k in keys]
        return f"[{', '.join(nums)}]"
    if style == CitationStyle.FOOTNOTE:
        return "".join(f"[^{entries[k].entry_index if k in entries else '?'}]" for k in keys)

    parts = []
    for k in keys:
        e = entries.get(k)
        if e is None:
            parts.append((None, "?"))
            continue
        parts.append((_names(e), str(e.year) if e.year else "n.d."))
    if narrative:
        return ", ".join(f"{n} ({y})" if n else "(?)" for n, y in parts)
    return "(" + "; ".join(f"{n}, {y}" if n else y for n, y in parts) + ")"


def _finish(
    builder: DocumentBuilder,
    anchors: _Anchors,
    entries: List[BibEntry],
    style: CitationStyle,
) -> ParsedDocument:
    by_key = {e.key: e for e in entries}
    surfaces: Dict[str, str] = {}
    unresolved: List[str] = []
    for occ, keys in anchors.keys.items():
        for k in keys:
            if k not in by_key and k not in unresolved:
                logger.warning("citation key {!r} has no bibliography entry", k)
                unresolved.append(k)
        surfaces[occ] = anchors.element_text.get(occ) or render_surface(
            keys, by_key, style, anchors.narrative.get(occ, False)
        )

    anchor_sentences: Dict[str, int] = {}
    for s in builder.sentences:
        for occ in _PLACEHOLDER.findall(s["text"]):
            anchor_sentences.setdefault(occ, s["index"])

    def sub(text: str) -> str:
        return _PLACEHOLDER.sub(lambda m: surfaces.get(m.group(1), ""), text)

    for b in builder.blocks:
        b["text"] = sub(b["text"])
    for s in builder.sentences:
        s["text"] = sub(s["text"])

    return builder.build(
        anchors={occ: list(keys) for occ, keys in anchors.keys.items()},
        anchor_sentences=anchor_sentences,
        anchor_surfaces=surfaces,
        anchor_style=style,
        unresolved_keys=unresolved,
        bibliography=entries,
    )


def _add_bibliography_blocks(builder: DocumentBuilder, entries: List[BibEntry]):
    if not entries:
        return
    builder.add_block(BlockKind.HEADING, "References", level=1)
    for e in sorted(entries, key=lambda x: x.entry_index or 0):
        builder.add_block(BlockKind.BIBLIOGRAPHY_ENTRY, e.raw or e.title, key=e.key, label=str(e.entry_index))


# ---------------------------------------------------------
# LATEX
# ---------------------------------------------------------

_COMMENT = re.compile(r"(?<!\\)%.*")
_CITE = re.compile(
    r"\\(cite|citep|citet|citealp|citeauthor|citeyear|parencite|textcite|autocite|footcite|nocite)\*?"
    r"\s*(?:\[[^\]]*\]\s*){0,2}\{([^}]*)\}"
)
_NARRATIVE_CITES = {"citet", "textcite", "citeauthor"}
_STRUCT = re.compile(
    r"\\(chapter|section|subsection|subsubsection|paragraph)\*?\s*\{"
    r"|\\begin\{([A-Za-z]+\*?)\}"
    r"|\$\$"
    r"|\\\["
)
SECTION_LEVELS = {"chapter": 1, "section": 1, "subsection": 2, "subsubsection": 3, "paragraph": 4}
MATH_ENVS = {"equation", "align", "gather", "multline", "eqnarray", "displaymath", "flalign"}
FLOAT_ENVS = {"figure": "Figure", "table": "Table"}
LIST_ENVS = {"itemize", "enumerate", "description"}

_STYLED = {"emph": "*", "textit": "*", "textbf": "**", "textsl": "*"}
_UNWRAP = {"texttt", "textsc", "textrm", "textsf", "textup", "mbox", "text", "url", "textnormal", "underline", "uline"}
_DROP_WITH_ARG = {
    "label", "vspace", "hspace", "includegraphics", "bibliographystyle", "bibliography",
    "thanks", "pagestyle", "thispagestyle", "setlength", "addtolength", "input", "include",
}
_DROP_BARE = {
    "noindent", "centering", "small", "footnotesize", "large", "Large", "normalsize", "maketitle",
    "newline", "par", "clearpage", "newpage", "bigskip", "medskip", "smallskip", "hline", "toprule",
    "midrule", "bottomrule", "tableofcontents", "appendix", "raggedright", "item", "protect", "and",
    "linewidth", "textwidth", "columnwidth", "today", "nonumber", "notag", "sloppy",
}
_SYMBOLS = {"%": "%", "&": "&", "_": "_", "#": "#", "$": "$", "{": "{", "}": "}", " ": " ", ",": " "}
_MACRO = re.compile(r"\\([A-Za-z]+)\*?|\\(.)")
_INLINE_MATH = re.compile(r"\$[^$]+\$|\\\(.*?\\\)", re.S)


def _line_col(text: str, pos: int) -> Tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def check_latex_balance(source: str):
    """Unbalanced braces or environments → MarkupParseError with a location."""
    stack: List[Tuple[str, int]] = []
    token = re.compile(r"\\[{}]|\\begin\{([^}]*)\}|\\end\{([^}]*)\}|[{}]")
    for m in token.finditer(source):
        tok = m.group(0)
        if tok in ("\\{", "\\}"):
            continue
        if m.group(1) is not None:
            stack.append((f"env:{m.group(1)}", m.start()))
        elif m.group(2) is not None:
            name = m.group(2)
            if not stack or stack[-1][0] != f"env:{name}":
                line, col = _line_col(source, m.start())
                opened = stack[-1][0] if stack else "nothing"
                raise MarkupParseError(f"\\end{{{name}}} closes {opened}", line, col)
            stack.pop()
        elif tok == "{":
            stack.append(("{", m.start()))
        else:
            if not stack or stack[-1][0] != "{":
                line, col = _line_col(source, m.start())
                raise MarkupParseError("unbalanced '}'", line, col)
            stack.pop()
    if stack:
        what, pos = stack[-1]
        line, col = _line_col(source, pos)
        label = "unclosed '{'" if what == "{" else f"unclosed environment {what[4:]}"
        raise MarkupParseError(label, line, col)


def _group_end(text: str, open_pos: int) -> int:
    """Index just past the brace group that opens at open_pos."""
    depth = 0
    i = open_pos
    while i < len(text):
        c = text[i]
        if c == "\\":
            i += 2
            continue
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                return i + 1
        i += 1
    return len(text)


def _env_end(text: str, name: str, start: int) -> Tuple[int, int]:
    """(content end, index past \\end{name}) for an environment whose content starts at start."""
    opener = re.compile(r"\\(begin|end)\{" + re.escape(name) + r"\}")
    depth = 1
    for m in opener.finditer(text, start):
        depth += 1 if m.group(1) == "begin" else -1
        if depth == 0:
            return m.start(), m.end()
    return len(text), len(text)


class _LatexReader:
    def __init__(self, doc_id: str, style: CitationStyle):
        self.builder = DocumentBuilder(doc_id, source_kind="markup")
        self.style = style
        self.anchors = _Anchors()
        self.bibitems: List[Tuple[str, str]] = []
        self.counters = {"equation": 0, "Figure": 0, "Table": 0}
        self._warned: set = set()

    # inline --------------------------------------------------

    def _cite(self, m: re.Match) -> str:
        cmd = m.group(1)
        keys = [k.strip() for k in m.group(2).split(",") if k.strip()]
        if cmd == "nocite" or not keys:
            return ""
        return self.anchors.add(keys, narrative=cmd in _NARRATIVE_CITES)

    def inline(self, text: str) -> str:
        """Strip presentational markup; keep inline math verbatim."""
        text = _CITE.sub(self._cite, text)
        out = []
        pos = 0
        for m in _INLINE_MATH.finditer(text):
            out.append(self._prose(text[pos:m.start()]))
            math = m.group(0)
            if math.startswith("\\("):
                math = f"${math[2:-2]}$"
            out.append(math)
            pos = m.end()
        out.append(self._prose(text[pos:]))
        return collapse_ws("".join(out))

    def _prose(self, text: str) -> str:
        out = []
        i = 0
        while i < len(text):
            m = _MACRO.match(text, i) if text[i] == "\\" else None
            if m is None:
                c = text[i]
                if c == "~":
                    out.append(" ")
                elif c not in "{}":
                    out.append(c)
                i += 1
                continue
            if m.group(2) is not None:
                sym = m.group(2)
                out.append(" " if sym == "\\" else _SYMBOLS.get(sym, sym))
                i = m.end()
                continue
            name = m.group(1)
            j = m.end()
            arg = None
            while j < len(text) and text[j] == " ":
                j += 1
            if j < len(text) and text[j] == "{":
                end = _group_end(text, j)
                arg = text[j + 1:end - 1]
            if name in _STYLED and arg is not None:
                mark = _STYLED[name]
                out.append(f"{mark}{self._prose(arg)}{mark}")
                i = end
            elif name in _UNWRAP and arg is not None:
                out.append(self._prose(arg))
                i = end
            elif name == "href" and arg is not None:
                k = end
                if k < len(text) and text[k] == "{":
                    end2 = _group_end(text, k)
                    out.append(self._prose(text[k + 1:end2 - 1]))
                    i = end2
                else:
                    i = end
            elif name == "footnote" and arg is not None:
                out.append(f" ({self._prose(arg)})")
                i = end
            elif name in _DROP_WITH_ARG and arg is not None:
                i = end
            elif name in ("ref", "eqref", "cref", "Cref", "autoref") and arg is not None:
                out.append(f"({arg})" if name == "eqref" else arg)
                i = end
            elif name in _DROP_BARE:
                i = m.end()
            else:
                if name not in self._warned:
                    logger.warning("unknown macro \\{} passed through verbatim", name)
                    self._warned.add(name)
                out.append(text[i:m.end()])
                i = m.end()
        return "".join(out)

    # blocks --------------------------------------------------

    def prose_blocks(self, text: str):
        for chunk in re.split(r"\n\s*\n", text):
            body = self.inline(chunk)
            if body:
                self.builder.add_block(BlockKind.PARAGRAPH, body)

    def display_math(self, content: str, numbered: bool):
        label = None
        body = re.sub(r"\\label\{[^}]*\}", "", content).strip()
        tag = re.search(r"\\tag\{([^}]*)\}", body)
        if tag:
            label = f"({tag.group(1)})"
        elif numbered:
            self.counters["equation"] += 1
            label = f"({self.counters['equation']})"
        self.builder.add_block(BlockKind.DISPLAY_MATH, f"$$ {body} $$", label=label)

    def float_env(self, kind: str, content: str):
        m = re.search(r"\\caption\s*(?:\[[^\]]*\])?\s*\{", content)
        if not m:
            return
        brace = m.end() - 1
        caption = content[brace + 1:_group_end(content, brace) - 1]
        self.counters[kind] += 1
        self.builder.add_block(BlockKind.CAPTION, f"{kind} {self.counters[kind]}: {self.inline(caption)}")

    def list_env(self, content: str):
        # split on top-level \item only
        items, depth, last = [], 0, None
        for m in re.finditer(r"\\begin\{|\\end\{|\\item\b(?:\[[^\]]*\])?", content):
            tok = m.group(0)
            if tok == "\\begin{":
                depth += 1
            elif tok == "\\end{":
                depth -= 1
            elif depth == 0:
                if last is not None:
                    items.append(content[last:m.start()])
                last = m.end()
        if last is not None:
            items.append(content[last:])
        for item in items:
            body = self.inline(re.sub(r"\\(?:begin|end)\{\w+\}", " ", item))
            if body:
                self.builder.add_block(BlockKind.LIST_ITEM, body)

    def bibliography_env(self, content: str):
        pattern = re.compile(r"\\bibitem\s*(?:\[[^\]]*\])?\s*\{([^}]*)\}")
        marks = list(pattern.finditer(content))
        for m, nxt in zip(marks, marks[1:] + [None]):
            end = nxt.start() if nxt else len(content)
            self.bibitems.append((m.group(1).strip(), content[m.end():end]))

    def walk(self, text: str):
        pos = 0
        while pos < len(text):
            m = _STRUCT.search(text, pos)
            if m is None:
                self.prose_blocks(text[pos:])
                return
            self.prose_blocks(text[pos:m.start()])
            if m.group(1):
                brace = m.end() - 1
                end = _group_end(text, brace)
                self.builder.add_block(BlockKind.HEADING, self.inline(text[brace + 1:end - 1]),
                                       level=SECTION_LEVELS[m.group(1)])
                pos = end
            elif m.group(2):
                name = m.group(2)
                base = name.rstrip("*")
                content_end, pos = _env_end(text, name, m.end())
                content = text[m.end():content_end]
                if base in MATH_ENVS:
                    self.display_math(content, numbered=not name.endswith("*"))
                elif base in FLOAT_ENVS:
                    self.float_env(FLOAT_ENVS[base], content)
                elif base in LIST_ENVS:
                    self.list_env(content)
                elif base == "thebibliography":
                    self.bibliography_env(re.sub(r"^\s*\{[^}]*\}", "", content))
                elif base == "abstract":
                    self.builder.add_block(BlockKind.HEADING, "Abstract", level=1)
                    self.walk(content)
                else:
                    self.walk(content)
            else:
                closer = "$$" if m.group(0) == "$$" else "\\]"
                end = text.find(closer, m.end())
                end = len(text) if end < 0 else end
                self.display_math(text[m.end():end], numbered=False)
                pos = end + len(closer)


def _latex_entries(reader: _LatexReader, bib_source: Optional[str]) -> List[BibEntry]:
    if reader.bibitems:
        return [
            parse_reference_string(reader.inline(text), key=key, entry_index=i)
            for i, (key, text) in enumerate(reader.bibitems, start=1)
        ]
    if bib_source:
        parsed = parse_bibtex(bib_source)
        # numbered by first citation, uncited entries after
        order = [k for k in reader.anchors.cited_order() if k in parsed]
        order += [k for k in parsed if k not in order]
        return [parsed[k].model_copy(update={"entry_index": i}) for i, k in enumerate(order, start=1)]
    return []


def normalize_latex(source: str, style: CitationStyle, doc_id: str, bib_source: Optional[str] = None) -> ParsedDocument:
    source = _COMMENT.sub("", source)
    check_latex_balance(source)
    m = re.search(r"\\begin\{document\}(.*)\\end\{document\}", source, re.S)
    body = m.group(1) if m else source

    reader = _LatexReader(doc_id, style)
    reader.walk(body)
    entries = _latex_entries(reader, bib_source)
    _add_bibliography_blocks(reader.builder, entries)
    return _finish(reader.builder, reader.anchors, entries, style)


# ---------------------------------------------------------
# HTML / JATS
# ---------------------------------------------------------

VOID_TAGS = {"br", "hr", "img", "meta", "link", "input", "col", "area", "base", "wbr", "source", "embed", "param", "track"}
IMPLICIT_CLOSE = {"p", "li", "dt", "dd", "tr", "td", "th", "option", "thead", "tbody", "tfoot"}
_TAG = re.compile(r"<!--.*?-->|<!\[CDATA\[.*?\]\]>|<[!?][^>]*>|<(/?)([A-Za-z][\w:.-]*)([^>]*?)(/?)>", re.S)


def check_tag_balance(source: str):
    stack: List[Tuple[str, int]] = []
    for m in _TAG.finditer(source):
        if m.group(2) is None:
            continue
        closing, name, self_closing = m.group(1), m.group(2).lower(), m.group(4)
        if self_closing or name in VOID_TAGS:
            continue
        if not closing:
            stack.append((name, m.start()))
            continue
        names = [n for n, _ in stack]
        if name not in names:
            line, col = _line_col(source, m.start())
            raise MarkupParseError(f"</{name}> without an open tag", line, col)
        while stack[-1][0] != name:
            open_name, open_pos = stack.pop()
            if open_name not in IMPLICIT_CLOSE:
                line, col = _line_col(source, open_pos)
                raise MarkupParseError(f"<{open_name}> is never closed", line, col)
        stack.pop()
    for name, pos in stack:
        if name not in IMPLICIT_CLOSE and name not in ("html", "body", "head"):
            line, col = _line_col(source, pos)
            raise MarkupParseError(f"<{name}> is never closed", line, col)


def _tex_of(node: Tag) -> str:
    ann = node.find("annotation", attrs={"encoding": "application/x-tex"})
    if ann is not None:
        return ann.get_text().strip()
    tex = node.find("tex-math")
    if tex is not None:
        return re.sub(r"\\\[|\\\]|^\$+|\$+$", "", tex.get_text().strip())
    return collapse_ws(node.get_text(" "))


class _HtmlReader:
    def __init__(self, doc_id: str, style: CitationStyle):
        self.builder = DocumentBuilder(doc_id, source_kind="markup")
        self.style = style
        self.anchors = _Anchors()
        self.entries: List[BibEntry] = []
        self.counters = {"Figure": 0, "Table": 0}

    # bibliography --------------------------------------------

    def collect_bibliography(self, soup: BeautifulSoup):
        items: List[Tag] = list(soup.find_all("ref"))
        if not items:
            for heading in soup.find_all(re.compile(r"^h[1-6]$")):
                if is_bibliography_heading(heading.get_text()):
                    lst = heading.find_next(["ol", "ul"])
                    if lst is not None:
                        items = [li for li in lst.find_all("li") if li.get("id")]
                        heading.decompose()
                        break
        for pos, item in enumerate(items, start=1):
            key = item.get("id") or f"ref{pos}"
            label = item.find("label")
            index = pos
            if label is not None and label.get_text().strip().strip("[].").isdigit():
                index = int(label.get_text().strip().strip("[]."))
                label.decompose()
            self.entries.append(parse_reference_string(collapse_ws(item.get_text(" ")), key=key, entry_index=index))
        for item in items:
            # the list itself is rendered from entries
            parent = item.parent
            item.decompose()
            if parent is not None and parent.name in ("ref-list", "ol", "ul") and not parent.find(True):
                parent.decompose()
        for ref_list in soup.find_all("ref-list"):
            ref_list.decompose()

    # inline --------------------------------------------------

    def mark_citations(self, soup: BeautifulSoup):
        keys = {e.key for e in self.entries}
        for node in list(soup.find_all(["xref", "a"])):
            if node.name == "xref":
                if node.get("ref-type") not in (None, "bibr"):
                    continue
                targets = (node.get("rid") or "").split()
            else:
                href = node.get("href") or ""
                if not href.startswith("#") or href[1:] not in keys:
                    continue
                targets = [href[1:]]
            if not targets:
                continue
            text = collapse_ws(node.get_text())
            node.replace_with(NavigableString(self.anchors.add(targets, text=text)))

    def mark_inline(self, soup: BeautifulSoup):
        for node in list(soup.find_all(["em", "i", "italic"])):
            node.replace_with(NavigableString(f"*{node.get_text()}*"))
        for node in list(soup.find_all(["strong", "b", "bold"])):
            node.replace_with(NavigableString(f"**{node.get_text()}**"))
        for node in list(soup.find_all(["inline-formula", "math"])):
            if node.name == "math" and node.get("display") == "block":
                continue
            if node.find_parent("disp-formula") is not None:
                continue
            node.replace_with(NavigableString(f"${_tex_of(node)}$"))

    # blocks --------------------------------------------------

    def caption(self, node: Tag, default_kind: str):
        cap = node.find(["figcaption", "caption"])
        if cap is None:
            return
        kind = "Table" if node.name in ("table", "table-wrap") or default_kind == "Table" else "Figure"
        self.counters[kind] += 1
        label = node.find("label")
        number = self.counters[kind]
        if label is not None:
            digits = re.search(r"\d+", label.get_text())
            number = int(digits.group(0)) if digits else number
        text = collapse_ws(cap.get_text(" "))
        text = re.sub(r"^(Figure|Fig\.|Table)\s*\d+[:.]?\s*", "", text, flags=re.I)
        self.builder.add_block(BlockKind.CAPTION, f"{kind} {number}: {text}")

    def walk(self, node: Tag, depth: int = 0):
        for child in node.children:
            if not isinstance(child, Tag):
                continue
            name = child.name.lower()
            if name in ("script", "style", "head", "ref-list"):
                continue
            if re.fullmatch(r"h[1-6]", name):
                self.builder.add_block(BlockKind.HEADING, collapse_ws(child.get_text(" ")), level=int(name[1]))
            elif name == "sec":
                title = child.find("title", recursive=False)
                if title is not None:
                    self.builder.add_block(BlockKind.HEADING, collapse_ws(title.get_text(" ")), level=depth + 1)
                self.walk(child, depth + 1)
            elif name == "abstract":
                self.builder.add_block(BlockKind.HEADING, "Abstract", level=1)
                self.walk(child, depth)
            elif name == "front":
                for abstract in child.find_all("abstract"):
                    self.builder.add_block(BlockKind.HEADING, "Abstract", level=1)
                    self.walk(abstract, depth)
            elif name == "p":
                text = collapse_ws(child.get_text())
                if text:
                    self.builder.add_block(BlockKind.PARAGRAPH, text)
            elif name == "li":
                text = collapse_ws(child.get_text())
                if text:
                    self.builder.add_block(BlockKind.LIST_ITEM, text)
            elif name in ("figure", "fig", "table-wrap", "table"):
                self.caption(child, "Table" if name.startswith("table") else "Figure")
            elif name == "disp-formula" or (name == "math" and child.get("display") == "block"):
                label = child.find("label")
                tag = label.get_text().strip() if label is not None else None
                if tag and not tag.startswith("("):
                    tag = f"({tag})"
                self.builder.add_block(BlockKind.DISPLAY_MATH, f"$$ {_tex_of(child)} $$", label=tag)
            elif name == "title":
                continue
            else:
                self.walk(child, depth)


def normalize_html(source: str, style: CitationStyle, doc_id: str) -> ParsedDocument:
    check_tag_balance(source)
    soup = BeautifulSoup(source, "html.parser")
    reader = _HtmlReader(doc_id, style)
    reader.collect_bibliography(soup)
    reader.mark_citations(soup)
    reader.mark_inline(soup)
    body = soup.find("body")
    if body is None:
        reader.walk(soup)
    else:
        # JATS keeps the abstract in <front>, outside <body>
        front = soup.find("front")
        if front is not None:
            for abstract in front.find_all("abstract"):
                reader.builder.add_block(BlockKind.HEADING, "Abstract", level=1)
                reader.walk(abstract)
        reader.walk(body)
    _add_bibliography_blocks(reader.builder, reader.entries)
    return _finish(reader.builder, reader.anchors, reader.entries, style)


def detect_markup(source: str) -> str:
    head = source.lstrip()[:200].lower()
    if head.startswith("<") or "<html" in head or "<article" in head:
        return "html"
    return "latex"


def normalize_markup(
    source: str,
    style: CitationStyle = CitationStyle.NUMERIC,
    doc_id: str = "doc",
    bib_source: Optional[str] = None,
    markup: Optional[str] = None,
) -> ParsedDocument:
    """LaTeX-like or XML/HTML-like source → ParsedDocument with exact citation anchors."""
    if not source or not source.strip():
        raise ContractViolation("markup source is empty")
    markup = markup or detect_markup(source)
    if markup == "html":
        return normalize_html(source, style, doc_id)
    return normalize_latex(source, style, doc_id, bib_source)
