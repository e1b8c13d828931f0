"""Tokenizer for the CLIPS subset: parens, symbols, strings, numbers, variables."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .ast import Span


class TokKind(Enum):
    LPAREN = "("
    RPAREN = ")"
    SYMBOL = "symbol"
    STRING = "string"
    INTEGER = "integer"
    FLOAT = "float"
    VARIABLE = "variable"  # ?name
    WILDCARD = "wildcard"  # bare ?
    ERROR = "error"


@dataclass(frozen=True)
class Token:
    kind: TokKind
    text: str
    value: object
    span: Span


_DELIMS = set(" \t\r\n();\"")


def tokenize(source: str) -> list[Token]:
    """Scan source into tokens. Lexical problems become ERROR tokens."""
    tokens: list[Token] = []
    i = 0
    line, col = 1, 1
    n = len(source)

    def advance(k: int = 1) -> None:
        nonlocal i, line, col
        for _ in range(k):
            if i < n and source[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            advance()
            continue
        if ch == ";":
            while i < n and source[i] != "\n":
                advance()
            continue
        span: Span = (line, col)
        if ch == "(":
            tokens.append(Token(TokKind.LPAREN, "(", None, span))
            advance()
            continue
        if ch == ")":
            tokens.append(Token(TokKind.RPAREN, ")", None, span))
            advance()
            continue
        if ch == '"':
            advance()
            buf: list[str] = []
            closed = False
            while i < n:
                c = source[i]
                if c == "\\" and i + 1 < n:
                    buf.append(source[i + 1])
                    advance(2)
                    continue
                if c == '"':
                    advance()
                    closed = True
                    break
                buf.append(c)
                advance()
            if not closed:
                tokens.append(Token(TokKind.ERROR, "".join(buf), "unterminated string", span))
            else:
                tokens.append(Token(TokKind.STRING, "".join(buf), "".join(buf), span))
            continue
        # atom: run to the next delimiter
        start = i
        while i < n and source[i] not in _DELIMS:
            advance()
        text = source[start:i]
        tokens.append(_classify(text, span))
    return tokens


def _classify(text: str, span: Span) -> Token:
    if text == "?":
        return Token(TokKind.WILDCARD, text, None, span)
    if text.startswith("?"):
        name = text[1:]
        if not name or not _symbolish(name):
            return Token(TokKind.ERROR, text, f"bad variable name {text!r}", span)
        return Token(TokKind.VARIABLE, text, name, span)
    num = _as_number(text)
    if num is not None:
        kind = TokKind.INTEGER if isinstance(num, int) else TokKind.FLOAT
        return Token(kind, text, num, span)
    if _symbolish(text):
        return Token(TokKind.SYMBOL, text, text, span)
    return Token(TokKind.ERROR, text, f"bad token {text!r}", span)


def _as_number(text: str) -> int | float | None:
    try:
        return int(text)
    except ValueError:
        pass
    if any(c in text for c in ".eE") and text not in (".", "-", "+"):
        try:
            return float(text)
        except ValueError:
            return None
    return None


def _symbolish(text: str) -> bool:
    # Symbols: printable, no whitespace/parens/quotes, not starting with '?'.
    return bool(text) and not text.startswith("?") and all(c not in _DELIMS for c in text)
