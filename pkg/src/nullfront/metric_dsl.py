"""A small expression language for metric coefficients and slice graphs.

Grammar (EBNF)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = "-" unary | power ;
    power   = primary [ "^" exponent ] ;
    exponent = "-" exponent | number | "(" exponent ")" | number "^" exponent ;
    primary = number | identifier | identifier "(" expr { "," expr } ")"
            | "(" expr ")" ;
    number  = digits [ "." digits ] [ ("e" | "E") ["+" | "-"] digits ]
            | "." digits [ exponent part ] ;

``^`` binds tighter than unary minus (``-x^2 == -(x^2)``) and is right
associative; its right operand must be a numeric constant. Identifiers are
variables (by default ``x0 .. x{m-1}`` and ``t``), named parameters, or one of
the functions ``sin cos exp sqrt tanh``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Union

import numpy as np

from .lorentz_chart import ChartError, MetricModel, validate_lorentzian

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "tanh")


class DSLError(ValueError):
    pass


class DSLSyntaxError(DSLError):
    def __init__(self, offset: int, message: str, text: str = ""):
        self.offset = offset
        self.message = message
        super().__init__(f"{message} at offset {offset}" + (f" in {text!r}" if text else ""))


class UnknownIdentifierError(DSLError):
    pass


class ArityError(DSLError):
    pass


class DSLEvalError(DSLError):
    """Unbound identifier or a domain error during evaluation."""


# --- AST ------------------------------------------------------------------

@dataclass(frozen=True)
class Lit:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Lit, Var, Param, Neg, BinOp, Call]

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


# --- lexer ----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    offset: int


def _byte_offset(text: str, i: int) -> int:
    return len(text[:i].encode("utf-8"))


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise DSLSyntaxError(_byte_offset(text, i), f"unexpected character {text[i]!r}", text)
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), _byte_offset(text, i)))
        i = m.end()
    toks.append(_Tok("end", "", _byte_offset(text, len(text))))
    return toks


_COORD_RE = re.compile(r"x(\d+)\Z")


def is_coordinate(name: str) -> bool:
    return name == "t" or _COORD_RE.match(name) is not None


class _Parser:
    def __init__(self, text, variables, params, dim):
        self.text = text
        self.toks = _tokenize(text)
        self.pos = 0
        self.variables = variables
        self.params = params
        self.dim = dim

    def peek(self) -> _Tok:
        return self.toks[self.pos]

    def take(self) -> _Tok:
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def error(self, tok: _Tok, msg: str):
        raise DSLSyntaxError(tok.offset, msg, self.text)

    def expect(self, text: str):
        tok = self.peek()
        if tok.text != text or tok.kind != "op":
            self.error(tok, f"expected {text!r}")
        return self.take()

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            self.error(tok, "expected operator or end of input")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.take().text
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.take().text
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.take()
            start = self.peek()
            exponent = self.unary()
            if not _is_constant(exponent):
                self.error(start, "exponent of '^' must be a numeric constant")
            return BinOp("^", base, exponent)
        return base

    def primary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "num":
            self.take()
            value = float(tok.text)
            if not math.isfinite(value):
                self.error(tok, "numeric literal out of range")
            return Lit(value)
        if tok.kind == "op" and tok.text == "(":
            self.take()
            e = self.expr()
            self.expect(")")
            return e
        if tok.kind == "ident":
            self.take()
            name = tok.text
            nxt = self.peek()
            if nxt.kind == "op" and nxt.text == "(":
                if name not in FUNCTIONS:
                    raise UnknownIdentifierError(f"unknown function {name!r} at offset {tok.offset}")
                self.take()
                if self.peek().kind == "op" and self.peek().text == ")":
                    raise ArityError(f"{name} takes 1 argument, got 0")
                args = [self.expr()]
                while self.peek().kind == "op" and self.peek().text == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != 1:
                    raise ArityError(f"{name} takes 1 argument, got {len(args)}")
                return Call(name, args[0])
            if name in FUNCTIONS:
                raise ArityError(f"function {name!r} used without an argument at offset {tok.offset}")
            return self.identifier(name, tok)
        if tok.kind == "end":
            self.error(tok, "expected operand")
        self.error(tok, f"expected operand, got {tok.text!r}")

    def identifier(self, name: str, tok: _Tok) -> Expr:
        if self.variables is not None:
            if name in self.variables:
                return Var(name)
        elif is_coordinate(name):
            m = _COORD_RE.match(name)
            if m and self.dim is not None and int(m.group(1)) >= self.dim:
                raise UnknownIdentifierError(
                    f"variable {name!r} out of range for dimension {self.dim} at offset {tok.offset}")
            return Var(name)
        if self.params is None or name in self.params:
            return Param(name)
        raise UnknownIdentifierError(f"unknown identifier {name!r} at offset {tok.offset}")


def _is_constant(e: Expr) -> bool:
    if isinstance(e, Lit):
        return True
    if isinstance(e, Neg):
        return _is_constant(e.operand)
    if isinstance(e, BinOp) and e.op == "^":
        return _is_constant(e.left) and _is_constant(e.right)
    return False


def parse_expr(text: str, *, variables: Optional[Iterable[str]] = None,
               params: Optional[Iterable[str]] = None, dim: Optional[int] = None) -> Expr:
    """Parse ``text`` into an AST.

    With ``variables`` given, exactly those names are variables; otherwise the
    chart coordinates ``x<i>`` and ``t`` are (``x<i>`` checked against ``dim``).
    With ``params`` given, any other identifier is an error.
    """
    if not isinstance(text, str) or not text.strip():
        raise DSLSyntaxError(0, "empty expression")
    vs = None if variables is None else frozenset(variables)
    ps = None if params is None else frozenset(params)
    return _Parser(text, vs, ps, dim).parse()


# --- printing ---------------------------------------------------------------

def _fmt_num(v: float) -> str:
    return repr(float(v))


def to_text(e: Expr) -> str:
    """Canonical, fully parenthesized-where-needed source text for ``e``."""
    if isinstance(e, Lit):
        return _fmt_num(e.value)
    if isinstance(e, (Var, Param)):
        return e.name
    if isinstance(e, Neg):
        inner = to_text(e.operand)
        if isinstance(e.operand, BinOp) and e.operand.op in "+-*/":
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Call):
        return f"{e.func}({to_text(e.arg)})"
    p = _PREC[e.op]
    left = to_text(e.left)
    right = to_text(e.right)
    if e.op == "^":
        if not isinstance(e.left, (Lit, Var, Param, Call)):
            left = f"({left})"
        if not isinstance(e.right, Lit) or e.right.value < 0:
            right = f"({right})"
        return f"{left}^{right}"
    if isinstance(e.left, BinOp) and _PREC[e.left.op] < p:
        left = f"({left})"
    if isinstance(e.right, BinOp) and _PREC[e.right.op] <= p or isinstance(e.right, Neg):
        right = f"({right})"
    return f"{left} {e.op} {right}"


# --- evaluation -------------------------------------------------------------

def _lookup(e, env):
    try:
        return env[e.name]
    except KeyError:
        raise DSLEvalError(f"unbound identifier {e.name!r}") from None


def eval_expr(e: Expr, env: Mapping[str, float]) -> float:
    """Evaluate with IEEE doubles; operands evaluated left to right."""
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, (Var, Param)):
        return float(_lookup(e, env))
    if isinstance(e, Neg):
        return -eval_expr(e.operand, env)
    if isinstance(e, Call):
        a = eval_expr(e.arg, env)
        try:
            if e.func == "sqrt":
                if a < 0:
                    raise DSLEvalError(f"sqrt of negative value {a!r}")
                return math.sqrt(a)
            return getattr(math, e.func)(a)
        except OverflowError as exc:
            raise DSLEvalError(f"{e.func}({a!r}) overflows") from exc
    a = eval_expr(e.left, env)
    b = eval_expr(e.right, env)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        if b == 0:
            raise DSLEvalError("division by zero")
        return a / b
    try:
        r = a ** b
    except (OverflowError, ZeroDivisionError) as exc:
        raise DSLEvalError(f"{a!r}^{b!r}: {exc}") from exc
    if isinstance(r, complex):
        raise DSLEvalError(f"{a!r}^{b!r} is not real")
    return r


_NP_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "tanh": np.tanh}


def eval_array(e: Expr, env: Mapping[str, object]) -> np.ndarray:
    """Vectorized evaluation; raises :class:`DSLEvalError` on any domain fault."""
    with np.errstate(all="raise"):
        try:
            return np.asarray(_eval_np(e, env), dtype=float)
        except FloatingPointError as exc:
            raise DSLEvalError(f"floating point fault in {to_text(e)!r}: {exc}") from exc


def _eval_np(e, env):
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, (Var, Param)):
        return np.asarray(_lookup(e, env), dtype=float)
    if isinstance(e, Neg):
        return -_eval_np(e.operand, env)
    if isinstance(e, Call):
        a = _eval_np(e.arg, env)
        if e.func == "sqrt" and np.any(np.asarray(a) < 0):
            raise DSLEvalError("sqrt of negative value")
        return _NP_FUNCS[e.func](a)
    a = _eval_np(e.left, env)
    b = _eval_np(e.right, env)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        if np.any(np.asarray(b) == 0):
            raise DSLEvalError("division by zero")
        return a / b
    if float(b) != int(b) and np.any(np.asarray(a) < 0):
        raise DSLEvalError("negative base with non-integer exponent")
    return np.power(a, b)


def coordinate_names(m: int) -> list[str]:
    return [f"x{i}" for i in range(m)] + ["t"]


# --- metric programs -------------------------------------------------------

_MINK_RE = re.compile(r"\s*minkowski\(\s*(\d+)\s*\)\s*\Z")


@dataclass(frozen=True)
class MetricProgram:
    """Metric coefficients as expressions.

    ``entries`` maps ``(i, j)`` with ``i <= j`` to expression text or ASTs;
    absent entries are zero. ``sample_points`` are checked for Lorentzian
    signature when the program is compiled.
    """

    dim: int
    entries: Mapping
    params: Mapping[str, float] = field(default_factory=dict)
    orientation_exprs: Optional[tuple] = None
    sample_points: tuple = ()

    @classmethod
    def diag(cls, *coeffs, params=None, **kw) -> "MetricProgram":
        m = len(coeffs) - 1
        return cls(dim=m, entries={(i, i): c for i, c in enumerate(coeffs)},
                   params=dict(params or {}), **kw)

    @classmethod
    def conformal(cls, omega: str, m: int, params=None, **kw) -> "MetricProgram":
        """``omega^2`` times the flat metric."""
        om = f"({omega})^2"
        coeffs = [om] * m + [f"-{om}"]
        return cls.diag(*coeffs, params=params, **kw)


def _parse_entry(value, m, params) -> Expr:
    if isinstance(value, (Lit, Var, Param, Neg, BinOp, Call)):
        return value
    if isinstance(value, (int, float)):
        return Lit(float(value))
    return parse_expr(str(value), params=params, dim=m)


def compile_metric(p: Union[MetricProgram, str]) -> MetricModel:
    if isinstance(p, str):
        mm = _MINK_RE.match(p)
        if mm is None:
            raise DSLError(f"unknown builtin metric {p!r}")
        from .lorentz_chart import minkowski
        return minkowski(int(mm.group(1)))

    m = p.dim
    n = m + 1
    params = dict(p.params)
    names = coordinate_names(m)
    table = {}
    for key, value in p.entries.items():
        i, j = sorted(int(k) for k in key)
        if j >= n:
            raise DSLError(f"metric entry {key} out of range for dimension {m}")
        if (i, j) in table:
            raise DSLError(f"metric entry {(i, j)} given twice")
        table[(i, j)] = _parse_entry(value, m, params)
    orient = None
    if p.orientation_exprs is not None:
        if len(p.orientation_exprs) != n:
            raise DSLError(f"orientation needs {n} expressions")
        orient = [_parse_entry(v, m, params) for v in p.orientation_exprs]

    def batch(xs):
        xs = np.asarray(xs, dtype=float)
        env = dict(params)
        for k, name in enumerate(names):
            env[name] = xs[..., k]
        G = np.zeros(xs.shape[:-1] + (n, n))
        for (i, j), e in table.items():
            val = eval_array(e, env)
            G[..., i, j] = val
            G[..., j, i] = val
        if not np.all(np.isfinite(G)):
            raise ChartError("metric program produced non-finite entries")
        return G

    def single(x):
        return batch(np.asarray(x, dtype=float)[None, :])[0]

    orientation = None
    if orient is not None:
        def orientation(x):
            env = dict(params)
            env.update(zip(names, (float(c) for c in x)))
            return np.array([eval_expr(e, env) for e in orient])

    model = MetricModel(dim=m, evaluator=single, batch_evaluator=batch,
                        orientation=orientation, name="program")
    if p.sample_points:
        report = validate_lorentzian(model, p.sample_points)
        if not report.ok:
            idx, pt, reason = report.violations[0]
            raise DSLError(f"metric program is not Lorentzian at sample {idx} {pt.tolist()}: {reason}")
    return model
