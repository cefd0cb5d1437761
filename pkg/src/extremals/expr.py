"""Symbolic scalar expressions over a fixed tuple of named variables.

The grammar is deliberately tiny: numbers, named variables, ``+ - * / ^``,
unary minus, ``sin`` / ``cos`` / ``exp``, and parentheses. Every operation is
closed under differentiation, so the exact derivative of any parseable
expression is again an expression of the same kind. Division desugars to a
power with exponent -1 and exponents must fold to constants, which is what
keeps the closure property trivial.

Two deliberate extensions:

* ``pi`` is accepted as a named literal and folds to a float at parse time.
* ``abs`` is accepted only when the caller opts in (evaluation-only
  Lagrangians); differentiating through it raises.

Evaluation has two paths. ``Expr.eval`` walks the tree and is used where
clarity beats speed. ``compile_vector`` generates a numpy function for a list
of expressions; all hot loops (integration, shooting) go through compiled
evaluators, which also accept complex arrays so complex-step derivatives work
out of the box.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ExpressionGrowthError, ParseError

_FUNCTIONS = ("sin", "cos", "exp")
_CONSTANTS = {"pi": math.pi}

NODE_CAP = 100_000


@dataclass(frozen=True)
class Expr:
    def diff(self, index: int) -> "Expr":
        raise NotImplementedError

    def eval(self, values):
        raise NotImplementedError

    def node_count(self) -> int:
        raise NotImplementedError

    def __str__(self) -> str:
        return _to_str(self, 0)


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def diff(self, index):
        return Const(0.0)

    def eval(self, values):
        return self.value

    def node_count(self):
        return 1


@dataclass(frozen=True)
class Var(Expr):
    name: str
    index: int

    def diff(self, index):
        return Const(1.0 if index == self.index else 0.0)

    def eval(self, values):
        return values[self.index]

    def node_count(self):
        return 1


@dataclass(frozen=True)
class Add(Expr):
    terms: tuple

    def diff(self, index):
        return add(*(t.diff(index) for t in self.terms))

    def eval(self, values):
        total = self.terms[0].eval(values)
        for t in self.terms[1:]:
            total = total + t.eval(values)
        return total

    def node_count(self):
        return 1 + sum(t.node_count() for t in self.terms)


@dataclass(frozen=True)
class Mul(Expr):
    factors: tuple

    def diff(self, index):
        parts = []
        for j, f in enumerate(self.factors):
            rest = self.factors[:j] + self.factors[j + 1:]
            parts.append(mul(f.diff(index), *rest))
        return add(*parts)

    def eval(self, values):
        total = self.factors[0].eval(values)
        for f in self.factors[1:]:
            total = total * f.eval(values)
        return total

    def node_count(self):
        return 1 + sum(f.node_count() for f in self.factors)


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: float

    def diff(self, index):
        return mul(Const(self.exponent), power(self.base, self.exponent - 1.0),
                   self.base.diff(index))

    def eval(self, values):
        e = self.exponent
        if e == int(e):
            e = int(e)
        return self.base.eval(values) ** e

    def node_count(self):
        return 1 + self.base.node_count()


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr

    def diff(self, index):
        d = self.arg.diff(index)
        if self.name == "sin":
            return mul(Func("cos", self.arg), d)
        if self.name == "cos":
            return mul(Const(-1.0), Func("sin", self.arg), d)
        if self.name == "exp":
            return mul(self, d)
        raise ParseError(f"{self.name} is not differentiable; it is admitted "
                         "for functional evaluation only")

    def eval(self, values):
        v = self.arg.eval(values)
        if self.name == "sin":
            return np.sin(v)
        if self.name == "cos":
            return np.cos(v)
        if self.name == "exp":
            return np.exp(v)
        return np.abs(v)

    def node_count(self):
        return 1 + self.arg.node_count()


# ---------------------------------------------------------------------------
# smart constructors with constant folding

def add(*terms):
    flat = []
    const = 0.0
    for t in terms:
        if isinstance(t, Add):
            for s in t.terms:
                if isinstance(s, Const):
                    const += s.value
                else:
                    flat.append(s)
        elif isinstance(t, Const):
            const += t.value
        else:
            flat.append(t)
    if const != 0.0 or not flat:
        flat.append(Const(const))
    if len(flat) == 1:
        return flat[0]
    return Add(tuple(flat))


def mul(*factors):
    flat = []
    const = 1.0
    for f in factors:
        if isinstance(f, Mul):
            for g in f.factors:
                if isinstance(g, Const):
                    const *= g.value
                else:
                    flat.append(g)
        elif isinstance(f, Const):
            const *= f.value
        else:
            flat.append(f)
    if const == 0.0:
        return Const(0.0)
    if const != 1.0 or not flat:
        flat.insert(0, Const(const))
    if len(flat) == 1:
        return flat[0]
    return Mul(tuple(flat))


def power(base, exponent: float):
    if exponent == 0.0:
        return Const(1.0)
    if exponent == 1.0:
        return base
    if isinstance(base, Const):
        try:
            return Const(float(base.value ** exponent))
        except (OverflowError, ZeroDivisionError):
            pass
    if isinstance(base, Pow):
        return power(base.base, base.exponent * exponent)
    return Pow(base, float(exponent))


def func(name, arg):
    if isinstance(arg, Const):
        table = {"sin": math.sin, "cos": math.cos, "exp": math.exp, "abs": abs}
        try:
            return Const(float(table[name](arg.value)))
        except OverflowError:
            pass
    return Func(name, arg)


def check_node_cap(exprs, cap=NODE_CAP):
    total = sum(e.node_count() for e in exprs)
    if total > cap:
        raise ExpressionGrowthError(
            f"expression grew to {total} nodes (cap {cap})")
    return total


# ---------------------------------------------------------------------------
# printing (round-trips through the parser)

def _to_str(e, prec):
    if isinstance(e, Const):
        v = e.value
        if v == int(v) and abs(v) < 1e16:
            s = str(int(v))
        else:
            s = repr(v)
        return f"({s})" if v < 0 and prec > 0 else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Add):
        s = " + ".join(_to_str(t, 1) for t in e.terms)
        return f"({s})" if prec > 1 else s
    if isinstance(e, Mul):
        s = "*".join(_to_str(f, 2) for f in e.factors)
        return f"({s})" if prec > 2 else s
    if isinstance(e, Pow):
        expo = e.exponent
        es = str(int(expo)) if expo == int(expo) else repr(expo)
        if expo < 0:
            es = f"({es})"
        return f"{_to_str(e.base, 3)}^{es}"
    return f"{e.name}({_to_str(e.arg, 0)})"


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"(?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),;=])"
    r"|(?P<nl>\n)"
    r"|(?P<ws>[ \t\r]+)"
    r"|(?P<comment>#[^\n]*)"
)


class _Token:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind, text, line, col):
        self.kind = kind
        self.text = text
        self.line = line
        self.col = col


def _tokenize(text):
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        tok = m.group()
        if kind == "nl":
            tokens.append(_Token("nl", tok, line, col))
            line += 1
            col = 1
        else:
            if kind not in ("ws", "comment"):
                tokens.append(_Token(kind, tok, line, col))
            col += len(tok)
        pos = m.end()
    tokens.append(_Token("end", "", line, col))
    return tokens


class _Parser:
    """Recursive-descent parser over a token list.

    ``newline_breaks`` controls whether a newline at parenthesis depth zero
    terminates the current expression (field/statement mode) or is plain
    whitespace (scalar mode).
    """

    def __init__(self, tokens, variables, allow_abs=False, newline_breaks=False):
        self.tokens = tokens
        self.pos = 0
        self.vars = {name: i for i, name in enumerate(variables)}
        self.allow_abs = allow_abs
        self.newline_breaks = newline_breaks
        self.depth = 0

    def peek(self):
        tok = self.tokens[self.pos]
        while tok.kind == "nl" and (self.depth > 0 or not self.newline_breaks):
            self.pos += 1
            tok = self.tokens[self.pos]
        return tok

    def next(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def accept(self, text):
        tok = self.peek()
        if tok.kind == "op" and tok.text == text:
            self.pos += 1
            return True
        return False

    def expect(self, text):
        tok = self.next()
        if tok.kind != "op" or tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text or 'end of input'!r}",
                             tok.line, tok.col)
        return tok

    # expression grammar -----------------------------------------------

    def parse_expr(self):
        e = self.parse_term()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in "+-":
                self.pos += 1
                rhs = self.parse_term()
                e = add(e, rhs if tok.text == "+" else mul(Const(-1.0), rhs))
            else:
                return e

    def parse_term(self):
        e = self.parse_factor()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in "*/":
                self.pos += 1
                rhs = self.parse_factor()
                e = mul(e, rhs) if tok.text == "*" else mul(e, power(rhs, -1.0))
            else:
                return e

    def parse_factor(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text in "+-":
            self.pos += 1
            inner = self.parse_factor()
            return inner if tok.text == "+" else mul(Const(-1.0), inner)
        return self.parse_power()

    def parse_power(self):
        base = self.parse_atom()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.pos += 1
            expo = self.parse_factor()
            if not isinstance(expo, Const):
                raise ParseError("exponent must fold to a constant",
                                 tok.line, tok.col)
            return power(base, expo.value)
        return base

    def parse_atom(self):
        tok = self.next()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "name":
            name = tok.text
            if name in _FUNCTIONS or (name == "abs" and self.allow_abs):
                self.expect("(")
                self.depth += 1
                arg = self.parse_expr()
                self.depth -= 1
                self.expect(")")
                return func(name, arg)
            if name in self.vars:
                return Var(name, self.vars[name])
            if name in _CONSTANTS:
                return Const(_CONSTANTS[name])
            raise ParseError(f"unknown symbol {name!r}", tok.line, tok.col)
        if tok.kind == "op" and tok.text == "(":
            self.depth += 1
            e = self.parse_expr()
            self.depth -= 1
            self.expect(")")
            return e
        raise ParseError(f"unexpected {tok.text or 'end of input'!r}",
                         tok.line, tok.col)


def parse_scalar(text, variables, allow_abs=False):
    """Parse one scalar expression over the given variable names."""
    p = _Parser(_tokenize(text), variables, allow_abs=allow_abs)
    e = p.parse_expr()
    tok = p.peek()
    if tok.kind != "end":
        raise ParseError(f"unexpected trailing {tok.text!r}", tok.line, tok.col)
    return e


def parse_components(text, count, variables, allow_abs=False):
    """Parse ``count`` comma-separated expressions (optionally parenthesised)."""
    p = _Parser(_tokenize(text), variables, allow_abs=allow_abs)
    wrapped = p.accept("(")
    if wrapped:
        p.depth += 1
    comps = [p.parse_expr()]
    while p.accept(","):
        comps.append(p.parse_expr())
    if wrapped:
        p.depth -= 1
        p.expect(")")
    tok = p.peek()
    if tok.kind != "end":
        raise ParseError(f"unexpected trailing {tok.text!r}", tok.line, tok.col)
    if len(comps) != count:
        raise ParseError(f"expected {count} components, found {len(comps)}")
    return tuple(comps)


def parse_field_statements(text, n, m):
    """Parse ``Xi = (e1, ..., en)`` statements separated by ';' or newlines.

    Returns a list of m component tuples, ordered X1..Xm. Each field must be
    defined exactly once.
    """
    variables = tuple(f"x{i+1}" for i in range(n))
    p = _Parser(_tokenize(text), variables, newline_breaks=True)
    seen = {}
    while True:
        tok = p.peek()
        while tok.kind == "nl" or (tok.kind == "op" and tok.text == ";"):
            p.pos += 1
            tok = p.peek()
        if tok.kind == "end":
            break
        if tok.kind != "name":
            raise ParseError(f"expected a field statement, found {tok.text!r}",
                             tok.line, tok.col)
        name = tok.text
        match = re.fullmatch(r"X(\d+)", name)
        if not match or not (1 <= int(match.group(1)) <= m):
            raise ParseError(f"field name {name!r} is not X1..X{m}",
                             tok.line, tok.col)
        idx = int(match.group(1)) - 1
        if idx in seen:
            raise ParseError(f"field {name} defined twice", tok.line, tok.col)
        p.pos += 1
        p.expect("=")
        p.expect("(")
        p.depth += 1
        comps = [p.parse_expr()]
        while p.accept(","):
            comps.append(p.parse_expr())
        p.depth -= 1
        p.expect(")")
        if len(comps) != n:
            raise ParseError(f"field {name} has {len(comps)} components, "
                             f"expected {n}", tok.line, tok.col)
        seen[idx] = tuple(comps)
    missing = [f"X{i+1}" for i in range(m) if i not in seen]
    if missing:
        raise ParseError(f"missing field definitions: {', '.join(missing)}")
    return [seen[i] for i in range(m)]


# ---------------------------------------------------------------------------
# compilation to numpy

def _emit(e):
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return f"_v{e.index}"
    if isinstance(e, Add):
        return "(" + " + ".join(_emit(t) for t in e.terms) + ")"
    if isinstance(e, Mul):
        return "(" + " * ".join(_emit(f) for f in e.factors) + ")"
    if isinstance(e, Pow):
        expo = e.exponent
        es = repr(int(expo)) if expo == int(expo) else repr(expo)
        return f"({_emit(e.base)} ** {es})"
    fn = {"sin": "_np.sin", "cos": "_np.cos", "exp": "_np.exp",
          "abs": "_np.abs"}[e.name]
    return f"{fn}({_emit(e.arg)})"


class CompiledVector:
    """A list of expressions compiled to one vectorized numpy function.

    Calling with k broadcastable arrays (one per variable) returns an array
    of shape ``broadcast_shape + (len(exprs),)``. Works on complex inputs,
    which is what the complex-step oracles rely on.
    """

    def __init__(self, exprs, nvars):
        self.exprs = tuple(exprs)
        self.nvars = nvars
        lines = ["def _fn(_a, _out, _np):"]
        used = set()
        for e in self.exprs:
            _collect_vars(e, used)
        for i in sorted(used):
            lines.append(f"    _v{i} = _a[{i}]")
        for j, e in enumerate(self.exprs):
            lines.append(f"    _out[..., {j}] = {_emit(e)}")
        if len(lines) == 1:
            lines.append("    pass")
        namespace = {}
        exec("\n".join(lines), namespace)  # noqa: S102 - generated from our own AST
        self._fn = namespace["_fn"]

    def __call__(self, args):
        shape = np.broadcast_shapes(*(np.shape(a) for a in args)) if args else ()
        dtype = np.result_type(np.float64, *(np.asarray(a).dtype for a in args))
        out = np.empty(shape + (len(self.exprs),), dtype)
        self._fn(args, out, np)
        return out


def _collect_vars(e, out):
    if isinstance(e, Var):
        out.add(e.index)
    elif isinstance(e, Add):
        for t in e.terms:
            _collect_vars(t, out)
    elif isinstance(e, Mul):
        for f in e.factors:
            _collect_vars(f, out)
    elif isinstance(e, Pow):
        _collect_vars(e.base, out)
    elif isinstance(e, Func):
        _collect_vars(e.arg, out)


def compile_vector(exprs, nvars):
    return CompiledVector(exprs, nvars)
