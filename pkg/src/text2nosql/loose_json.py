"""Tolerant JSON reader for MongoDB shell fragments.

Accepts everything strict JSON accepts, plus:

* unquoted keys (``{_id: 0}``), including ``$``-prefixed and dotted ones
* single-quoted strings
* trailing commas in objects and arrays
* a missing colon between a key and an object value (``{$project {_id:0}}``)
* ``//`` and ``/* */`` comments
* ``NaN`` / ``Infinity`` / ``-Infinity``

Objects decode to ``dict`` (insertion ordered), arrays to ``list``. Integer
literals within the 53-bit range stay ``int``; everything else is ``float``.
"""

from __future__ import annotations

from typing import Any

from .errors import MalformedFragment

MAX_SAFE_INT = 2**53

_BARE_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_$")
_BARE_BODY = _BARE_START | set("0123456789.")
_ESCAPES = {
    '"': '"',
    "'": "'",
    "\\": "\\",
    "/": "/",
    "b": "\b",
    "f": "\f",
    "n": "\n",
    "r": "\r",
    "t": "\t",
}
_LITERALS = {
    "true": True,
    "false": False,
    "null": None,
    "NaN": float("nan"),
    "Infinity": float("inf"),
}


class LooseDecoder:
    """Recursive-descent reader over ``text`` starting at ``pos``.

    The query parser drives this directly to read call arguments in place,
    so the cursor is public.
    """

    def __init__(self, text: str, pos: int = 0):
        self.text = text
        self.pos = pos

    def fail(self, message: str, pos: int | None = None) -> MalformedFragment:
        return MalformedFragment(self.pos if pos is None else pos, message)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def skip_ws(self) -> None:
        text = self.text
        n = len(text)
        while self.pos < n:
            ch = text[self.pos]
            if ch in " \t\r\n﻿":
                self.pos += 1
            elif text.startswith("//", self.pos):
                end = text.find("\n", self.pos)
                self.pos = n if end < 0 else end + 1
            elif text.startswith("/*", self.pos):
                end = text.find("*/", self.pos + 2)
                if end < 0:
                    raise self.fail("unterminated comment")
                self.pos = end + 2
            else:
                break

    def expect(self, ch: str) -> None:
        self.skip_ws()
        if self.peek() != ch:
            found = self.peek() or "end of input"
            raise self.fail(f"expected {ch!r}, found {found!r}")
        self.pos += 1

    def value(self) -> Any:
        self.skip_ws()
        ch = self.peek()
        if not ch:
            raise self.fail("unexpected end of input")
        if ch == "{":
            return self.object()
        if ch == "[":
            return self.array()
        if ch in "\"'":
            return self.string()
        if ch and (ch.isdigit() or ch in "-+."):
            if self.text.startswith("-Infinity", self.pos):
                self.pos += len("-Infinity")
                return float("-inf")
            return self.number()
        if ch in _BARE_START:
            start = self.pos
            word = self.bareword()
            if word in _LITERALS:
                return _LITERALS[word]
            raise self.fail(f"unexpected bare word {word!r}", start)
        raise self.fail(f"unexpected character {ch!r}")

    def object(self) -> dict[str, Any]:
        self.expect("{")
        out: dict[str, Any] = {}
        while True:
            self.skip_ws()
            ch = self.peek()
            if ch == "}":
                self.pos += 1
                return out
            if ch == ",":
                raise self.fail("empty object member")
            key = self.key()
            self.skip_ws()
            if self.peek() == ":":
                self.pos += 1
            elif self.peek() != "{":
                raise self.fail(f"expected ':' after key {key!r}")
            out[key] = self.value()
            self.skip_ws()
            ch = self.peek()
            if ch == ",":
                self.pos += 1
            elif ch != "}":
                raise self.fail("expected ',' or '}' in object")

    def array(self) -> list[Any]:
        self.expect("[")
        out: list[Any] = []
        while True:
            self.skip_ws()
            ch = self.peek()
            if ch == "]":
                self.pos += 1
                return out
            if ch == ",":
                raise self.fail("empty array element")
            out.append(self.value())
            self.skip_ws()
            ch = self.peek()
            if ch == ",":
                self.pos += 1
            elif ch != "]":
                raise self.fail("expected ',' or ']' in array")

    def key(self) -> str:
        ch = self.peek()
        if ch and ch in "\"'":
            return self.string()
        if ch and (ch in _BARE_START or ch.isdigit()):
            return self.bareword(allow_digit_start=True)
        raise self.fail(f"expected object key, found {ch or 'end of input'!r}")

    def bareword(self, allow_digit_start: bool = False) -> str:
        start = self.pos
        text = self.text
        ch = self.peek()
        if not (ch in _BARE_START or (allow_digit_start and ch.isdigit())):
            raise self.fail("expected identifier")
        self.pos += 1
        while self.pos < len(text) and text[self.pos] in _BARE_BODY:
            self.pos += 1
        return text[start:self.pos]

    def string(self) -> str:
        quote = self.text[self.pos]
        start = self.pos
        self.pos += 1
        parts: list[str] = []
        text = self.text
        while True:
            if self.pos >= len(text):
                raise self.fail("unterminated string", start)
            ch = text[self.pos]
            if ch == quote:
                self.pos += 1
                return "".join(parts)
            if ch == "\n":
                raise self.fail("newline inside string")
            if ch == "\\":
                self.pos += 1
                esc = self.peek()
                if not esc:
                    raise self.fail("unterminated escape", start)
                if esc == "u":
                    digits = text[self.pos + 1:self.pos + 5]
                    if len(digits) != 4 or any(c not in "0123456789abcdefABCDEF" for c in digits):
                        raise self.fail("bad \\u escape")
                    code = int(digits, 16)
                    self.pos += 5
                    low = text[self.pos + 2:self.pos + 6]
                    if (0xD800 <= code < 0xDC00 and text.startswith("\\u", self.pos)
                            and len(low) == 4 and all(c in "0123456789abcdefABCDEF" for c in low)
                            and 0xDC00 <= int(low, 16) < 0xE000):
                        code = 0x10000 + ((code - 0xD800) << 10) + (int(low, 16) - 0xDC00)
                        self.pos += 6
                    parts.append(chr(code))
                    continue
                parts.append(_ESCAPES.get(esc, esc))
                self.pos += 1
                continue
            parts.append(ch)
            self.pos += 1

    def number(self) -> int | float:
        text = self.text
        start = self.pos
        if self.peek() and self.peek() in "+-":
            self.pos += 1
        int_start = self.pos
        while self.peek().isdigit():
            self.pos += 1
        is_float = False
        if self.peek() == ".":
            is_float = True
            self.pos += 1
            while self.peek().isdigit():
                self.pos += 1
        if self.pos == int_start or text[int_start:self.pos] == ".":
            raise self.fail("malformed number", start)
        if self.peek() in ("e", "E"):
            is_float = True
            self.pos += 1
            if self.peek() and self.peek() in "+-":
                self.pos += 1
            exp_start = self.pos
            while self.peek().isdigit():
                self.pos += 1
            if self.pos == exp_start:
                raise self.fail("malformed exponent", start)
        literal = text[start:self.pos]
        if self.peek() and (self.peek() in _BARE_BODY):
            raise self.fail(f"malformed number {literal + self.peek()!r}", start)
        if not is_float:
            n = int(literal)
            if -MAX_SAFE_INT <= n <= MAX_SAFE_INT:
                return n
            return float(n)
        return float(literal)


def loose_json_decode(text: str) -> Any:
    """Decode a relaxed-JSON fragment; the whole text must be consumed."""
    dec = LooseDecoder(text)
    out = dec.value()
    dec.skip_ws()
    if dec.pos != len(text):
        raise dec.fail("trailing characters after value")
    return out
