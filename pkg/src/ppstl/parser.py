"""Text syntax for formulas: a recursive-descent parser and a printer.

Grammar (loosest binding first)::

    expr     := disj ('->' expr)?
    disj     := conj ('|' conj)*
    conj     := temporal ('&' temporal)*
    temporal := unary (('U'|'R'|'S'|'T') interval? unary)*      left-assoc
    unary    := ('!'|'X'|'wX'|'Y'|'wY'|'F'|'G'|'O'|'H') interval? unary
              | '(' expr ')' | 'TRUE' | atom
    atom     := linear ('>='|'<'|'<='|'>') linear
    linear   := ['-'] term (('+'|'-') term)*
    term     := NUMBER '*' IDENT | IDENT | NUMBER
    interval := '[' NAT ',' (NAT | 'inf') ']'

``a -> b`` is sugar for ``!a | b``. Signals may appear on both sides of a
comparison; they are moved to the left so the stored atom reads
``sum(w * x) op c``.
"""

from __future__ import annotations

import re
from typing import Collection

from ppstl import formula as fm
from ppstl.errors import FormulaSyntaxError, IntervalError, UnknownVariableError
from ppstl.formula import Atom, Formula, Interval

UNARY_SYMBOLS = {
    "!": fm.NOT, "X": fm.NEXT, "wX": fm.WNEXT, "Y": fm.YESTERDAY, "wY": fm.WYESTERDAY,
    "F": fm.EVENTUALLY, "G": fm.GLOBALLY, "O": fm.ONCE, "H": fm.HISTORICALLY,
}
BINARY_TEMPORAL = {"U": fm.UNTIL, "R": fm.RELEASE, "S": fm.SINCE, "T": fm.TRIGGERS}
KEYWORDS = set(UNARY_SYMBOLS) | set(BINARY_TEMPORAL) | {"TRUE", "true", "inf"}

_SYMBOL_OF = {v: k for k, v in UNARY_SYMBOLS.items()}
_SYMBOL_OF.update({v: k for k, v in BINARY_TEMPORAL.items()})
_SYMBOL_OF.update({fm.OR: "|", fm.AND: "&"})

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<op>->|>=|<=|[<>!&|()\[\],+\-*])
""", re.VERBOSE)


class _Tok:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind, text, line, col):
        self.kind, self.text, self.line, self.col = kind, text, line, col

    def __repr__(self):
        return f"{self.kind}:{self.text}@{self.line}:{self.col}"


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        tok = m.group()
        if kind == "ws":
            for k, ch in enumerate(tok):
                if ch == "\n":
                    line += 1
                    line_start = pos + k + 1
        else:
            if kind == "ident" and tok in KEYWORDS:
                kind = "kw"
            toks.append(_Tok(kind, tok, line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str, variables: Collection[str] | None):
        self.toks = _tokenize(text)
        self.i = 0
        self.variables = None if variables is None else set(variables)

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.cur
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise FormulaSyntaxError(f"{msg}, found {found}", tok.line, tok.col)

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.cur.kind in ("op", "kw") and self.cur.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> _Tok:
        if not (self.cur.kind in ("op", "kw") and self.cur.text == text):
            self.error(f"expected {text!r}")
        return self.take()

    def parse(self) -> Formula:
        f = self.expr()
        if self.cur.kind != "eof":
            self.error("unexpected trailing input")
        return f

    def expr(self) -> Formula:
        left = self.disj()
        if self.accept("->"):
            return fm.or_(fm.not_(left), self.expr())
        return left

    def disj(self) -> Formula:
        f = self.conj()
        while self.accept("|"):
            f = fm.or_(f, self.conj())
        return f

    def conj(self) -> Formula:
        f = self.temporal()
        while self.accept("&"):
            f = fm.and_(f, self.temporal())
        return f

    def temporal(self) -> Formula:
        f = self.unary()
        while self.cur.kind == "kw" and self.cur.text in BINARY_TEMPORAL:
            op = BINARY_TEMPORAL[self.take().text]
            iv = self.interval()
            f = Formula(op, (f, self.unary()), iv)
        return f

    def unary(self) -> Formula:
        tok = self.cur
        if tok.kind in ("op", "kw") and tok.text in UNARY_SYMBOLS:
            self.take()
            op = UNARY_SYMBOLS[tok.text]
            iv = self.interval() if op in fm.TIMED else None
            return Formula(op, (self.unary(),), iv)
        if self.accept("("):
            f = self.expr()
            self.expect(")")
            return f
        if tok.kind == "kw" and tok.text in ("TRUE", "true"):
            self.take()
            return fm.true()
        if tok.kind in ("ident", "num") or (tok.kind == "op" and tok.text == "-"):
            return self.atom()
        self.error("expected a formula")

    def interval(self) -> Interval | None:
        if not (self.cur.kind == "op" and self.cur.text == "["):
            return None
        start = self.take()
        lo = self.natural()
        self.expect(",")
        if self.cur.kind == "kw" and self.cur.text == "inf":
            self.take()
            hi = fm.INF
        else:
            hi = self.natural()
        self.expect("]")
        try:
            return Interval(lo, hi)
        except IntervalError as exc:
            raise IntervalError(f"{exc} (line {start.line}, column {start.col})") from None

    def natural(self) -> int:
        tok = self.cur
        if tok.kind != "num" or not tok.text.isdigit():
            self.error("expected a natural number")
        self.take()
        return int(tok.text)

    def linear(self) -> tuple[dict[str, float], float, list[_Tok]]:
        coeffs: dict[str, float] = {}
        const = 0.0
        idents = []
        sign = -1.0 if self.accept("-") else 1.0
        while True:
            tok = self.cur
            if tok.kind == "num":
                self.take()
                value = float(tok.text)
                if self.accept("*"):
                    name_tok = self.cur
                    if name_tok.kind != "ident":
                        self.error("expected a signal name after '*'")
                    self.take()
                    idents.append(name_tok)
                    coeffs[name_tok.text] = coeffs.get(name_tok.text, 0.0) + sign * value
                else:
                    const += sign * value
            elif tok.kind == "ident":
                self.take()
                idents.append(tok)
                coeffs[tok.text] = coeffs.get(tok.text, 0.0) + sign
            else:
                self.error("expected a signal name or number")
            if self.accept("+"):
                sign = 1.0
            elif self.accept("-"):
                sign = -1.0
            else:
                return coeffs, const, idents

    def atom(self) -> Formula:
        start = self.cur
        lhs, lconst, lids = self.linear()
        tok = self.cur
        if not (tok.kind == "op" and tok.text in fm.COMPARISONS):
            self.error("expected a comparison ('>=', '<', '<=', '>')")
        self.take()
        rhs, rconst, rids = self.linear()
        for name_tok in lids + rids:
            if self.variables is not None and name_tok.text not in self.variables:
                raise UnknownVariableError(
                    f"unknown variable {name_tok.text!r} (line {name_tok.line}, column {name_tok.col})")
        terms = dict(lhs)
        for name, w in rhs.items():
            terms[name] = terms.get(name, 0.0) - w
        terms = {n: w for n, w in terms.items() if w != 0.0}
        if not terms:
            raise FormulaSyntaxError("atom has no signal terms", start.line, start.col)
        threshold = rconst - lconst
        return Formula(fm.ATOM, atom=Atom(tuple(terms.items()), threshold, tok.text))


def parse(text: str, variables: Collection[str] | None = None) -> Formula:
    """Parse formula text. If ``variables`` is given, unknown signal names are errors."""
    return _Parser(text, variables).parse()


def format_number(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def _atom_text(a: Atom) -> str:
    parts = []
    for k, (name, w) in enumerate(a.terms):
        mag = abs(w)
        body = name if mag == 1.0 else f"{format_number(mag)} * {name}"
        if k == 0:
            parts.append(("-" if w < 0 else "") + body)
        else:
            parts.append((" - " if w < 0 else " + ") + body)
    return f"{''.join(parts)} {a.op} {format_number(a.threshold)}"


def _interval_text(iv: Interval | None) -> str:
    if iv is None or iv.is_default:
        return ""
    return str(iv)


def to_text(f: Formula) -> str:
    """Print ``f`` so that ``parse(to_text(f)) == f``."""
    op = f.op
    if op == fm.TRUE:
        return "TRUE"
    if op == fm.ATOM:
        return _atom_text(f.atom)
    if op in fm.UNARY:
        inner = f.args[0]
        body = to_text(inner)
        if inner.op in fm.BINARY:
            body = body[1:-1]
        return f"{_SYMBOL_OF[op]}{_interval_text(f.interval)}({body})"
    left, right = (to_text(a) for a in f.args)
    sym = _SYMBOL_OF[op]
    if op in fm.TIMED:
        sym += _interval_text(f.interval)
    return f"({left} {sym} {right})"
