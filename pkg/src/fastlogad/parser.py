"""Streaming Drain parser: raw log content -> (template id, parameters).

Lines are routed through a fixed-depth prefix tree (token count, then the
leading tokens) to a leaf holding candidate templates; the most similar
template above the threshold absorbs the line, otherwise a new template is
created.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator, TransformerMixin

WILDCARD = "<*>"

# Order matters: block ids and addresses before bare numbers.
DEFAULT_MASKS = {
    "block_id": r"blk_-?\d+",
    "ipv4_port": r"/?(?:\d{1,3}\.){3}\d{1,3}(?::\d+)?",
    "hex": r"\b(?:0x)?[0-9a-fA-F]{8,}\b",
    "path": r"(?<![\w<])(?:/[\w.\-]+){2,}/?",
    "integer": r"(?<![\w.])[-+]?\d+(?![\w.])",
}


@dataclass
class RawLogLine:
    line_no: int
    content: str
    timestamp: float | None = None
    label_flag: int | None = None


@dataclass
class LogTemplate:
    template_id: int
    tokens: list[str]
    match_count: int = 1

    @property
    def n_wildcards(self) -> int:
        return sum(tok.count(WILDCARD) for tok in self.tokens)

    def __str__(self) -> str:
        return " ".join(self.tokens)


@dataclass
class ParsedLog:
    line_no: int
    timestamp: float | None
    template_id: int
    parameters: list[str]
    label_flag: int | None = None
    content: str = field(default="", repr=False)

    def to_record(self) -> str:
        ts = "" if self.timestamp is None else _fmt_num(self.timestamp)
        flag = "" if self.label_flag is None else str(int(self.label_flag))
        return f"{self.line_no}\t{ts}\t{self.template_id}\t{json.dumps(self.parameters)}\t{flag}"

    @classmethod
    def from_record(cls, line: str) -> "ParsedLog":
        line_no, ts, tid, params, flag = line.rstrip("\n").split("\t")
        return cls(int(line_no), float(ts) if ts else None, int(tid), json.loads(params),
                   int(flag) if flag else None)


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def compile_masks(masks: dict[str, str] | Sequence[str] | None):
    if masks is None:
        masks = DEFAULT_MASKS
    patterns = masks.values() if isinstance(masks, dict) else masks
    return [re.compile(p) for p in patterns]


def tokenize_content(content: str, masks=None) -> list[str]:
    """Whitespace tokens after replacing variable substrings with the wildcard."""
    compiled = compile_masks(masks) if masks is None or not _is_compiled(masks) else masks
    for pattern in compiled:
        content = pattern.sub(WILDCARD, content)
    return content.split()


def _is_compiled(masks):
    return isinstance(masks, list) and all(isinstance(m, re.Pattern) for m in masks)


def similarity(tokens: Sequence[str], template: LogTemplate | Sequence[str]) -> float:
    """Fraction of positions where the template holds the same literal token."""
    t_tokens = template.tokens if isinstance(template, LogTemplate) else template
    if len(tokens) != len(t_tokens):
        raise ValueError(f"length mismatch: {len(tokens)} tokens vs template of {len(t_tokens)}")
    if not tokens:
        return 0.0
    same = sum(1 for a, b in zip(tokens, t_tokens) if b != WILDCARD and a == b)
    return same / len(tokens)


def _has_digit(token: str) -> bool:
    return any(ch.isdigit() for ch in token)


class _Node:
    __slots__ = ("children", "template_ids")

    def __init__(self):
        self.children: dict[str, _Node] = {}
        self.template_ids: list[int] = []


class DrainParser(BaseEstimator, TransformerMixin):
    """Drain with fixed depth; ``fit`` learns templates, ``transform`` maps content to ids.

    ``depth`` counts the root and the length layer, so ``depth - 3`` leading
    tokens key the internal nodes (depth 4 -> the first token).
    """

    def __init__(self, depth: int = 4, sim_threshold: float = 0.4, max_children: int = 100,
                 masks=None):
        self.depth = depth
        self.sim_threshold = sim_threshold
        self.max_children = max_children
        self.masks = masks

    def _ensure_state(self):
        if not hasattr(self, "root_"):
            if self.depth < 3:
                raise ValueError("depth must be at least 3")
            self.root_ = _Node()
            self.templates_: dict[int, LogTemplate] = {}
            self._compiled = compile_masks(self.masks)

    # -- sklearn surface -------------------------------------------------
    def fit(self, X: Iterable, y=None):
        for item in X:
            self.parse_line(item)
        return self

    def transform(self, X: Iterable) -> list[int]:
        """Template ids; unseen lines create templates (Drain is online)."""
        return [self.parse_line(item).template_id for item in X]

    def partial_fit(self, X: Iterable, y=None):
        return self.fit(X)

    # -- streaming API ---------------------------------------------------
    @property
    def templates(self) -> dict[int, LogTemplate]:
        self._ensure_state()
        return self.templates_

    def tokenize(self, content: str) -> list[str]:
        self._ensure_state()
        return tokenize_content(content, self._compiled)

    def parse_line(self, line: RawLogLine | str) -> ParsedLog:
        self._ensure_state()
        if isinstance(line, str):
            line = RawLogLine(0, line)
        raw_tokens = line.content.split()
        tokens = self.tokenize(line.content)
        template = self._match(tokens)
        if template is None:
            template = LogTemplate(len(self.templates_) + 1, list(tokens), 1)
            self.templates_[template.template_id] = template
            self._insert(template)
        else:
            template.match_count += 1
            template.tokens = [a if a == b else WILDCARD for a, b in zip(template.tokens, tokens)]
        params = extract_parameters(template.tokens, raw_tokens if len(raw_tokens) == len(tokens) else tokens)
        return ParsedLog(line.line_no, line.timestamp, template.template_id, params, line.label_flag,
                         line.content)

    def _path(self, tokens):
        keys = [str(len(tokens))]
        n_levels = min(self.depth - 3, len(tokens))
        return keys, tokens[:n_levels]

    def _leaf(self, tokens, create: bool):
        (length_key,), prefix = self._path(tokens)
        node = self.root_.children.get(length_key)
        if node is None:
            if not create:
                return None
            node = self.root_.children[length_key] = _Node()
        for token in prefix:
            if token in node.children:
                node = node.children[token]
                continue
            if not create:
                node = node.children.get(WILDCARD)
                if node is None:
                    return None
                continue
            node = self._child_for_insert(node, token)
        return node

    def _child_for_insert(self, node, token):
        if _has_digit(token) or token == WILDCARD:
            key = WILDCARD
        elif WILDCARD in node.children:
            key = token if len(node.children) < self.max_children else WILDCARD
        elif len(node.children) + 1 < self.max_children:
            key = token
        else:
            key = WILDCARD
        child = node.children.get(key)
        if child is None:
            child = node.children[key] = _Node()
        return child

    def _match(self, tokens) -> LogTemplate | None:
        leaf = self._leaf(tokens, create=False)
        if leaf is None:
            return None
        best, best_sim = None, -1.0
        for tid in leaf.template_ids:
            sim = similarity(tokens, self.templates_[tid])
            if sim > best_sim or (sim == best_sim and tid < best.template_id):
                best, best_sim = self.templates_[tid], sim
        if best is not None and best_sim >= self.sim_threshold:
            return best
        return None

    def _insert(self, template: LogTemplate):
        leaf = self._leaf(template.tokens, create=True)
        leaf.template_ids.append(template.template_id)

    def templates_tsv(self) -> str:
        self._ensure_state()
        lines = [f"{tid}\t{t}" for tid, t in sorted(self.templates_.items())]
        return "\n".join(lines) + ("\n" if lines else "")


def extract_parameters(template_tokens: Sequence[str], raw_tokens: Sequence[str]) -> list[str]:
    """Text captured at each wildcard of the template, in order."""
    params = []
    for tmpl, raw in zip(template_tokens, raw_tokens):
        n = tmpl.count(WILDCARD)
        if not n:
            continue
        if tmpl == WILDCARD:
            params.append(raw)
            continue
        regex = "^" + "(.*?)".join(re.escape(part) for part in tmpl.split(WILDCARD)) + "$"
        found = re.match(regex, raw)
        params.extend(found.groups() if found else [raw] + [""] * (n - 1))
    return params
