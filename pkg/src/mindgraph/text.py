"""Shared text helpers: tokenization, sentence splitting, paragraph windows."""

from __future__ import annotations

import re

# lowercase alphanumeric runs, or single CJK ideographs
_TOKEN_RE = re.compile(r"[a-z0-9]+|[一-鿿]")
_SENTENCE_RE = re.compile(r"[^.!?。！？]+[.!?。！？]*")


def tokenize(text: str) -> list[str]:
    """Lowercased tokens; punctuation and whitespace are separators."""
    return _TOKEN_RE.findall(text.lower())


def split_sentences(text: str) -> list[str]:
    """Crude sentence split on terminal punctuation, preserving content."""
    out = []
    for chunk in _SENTENCE_RE.findall(text):
        stripped = chunk.strip().strip(".!?。！？").strip()
        if stripped:
            out.append(stripped)
    return out


def paragraph_windows(body: str, token_budget: int) -> list[str]:
    """Pack paragraphs into windows of at most ``token_budget`` tokens.

    Paragraph boundaries are blank lines. A single paragraph longer than the
    budget becomes its own window; paragraphs are never split mid-way.
    """
    if token_budget < 1:
        raise ValueError("token budget must be positive")
    paragraphs = [p.strip() for p in re.split(r"\n\s*\n", body) if p.strip()]
    windows: list[str] = []
    current: list[str] = []
    used = 0
    for para in paragraphs:
        cost = len(tokenize(para))
        if current and used + cost > token_budget:
            windows.append("\n\n".join(current))
            current, used = [], 0
        current.append(para)
        used += cost
    if current:
        windows.append("\n\n".join(current))
    return windows
