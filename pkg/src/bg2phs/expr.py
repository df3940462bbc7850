"""Symbolic scalar expressions over state symbols and named parameters.

Small, self-contained expression engine: exact rational constants, symbols,
arithmetic, integer powers, and a fixed set of elementary functions
(sin, cos, exp, ln, sqrt, tanh).  Provides parsing, evaluation,
differentiation, structural normalization, and probabilistic zero testing
(Schwartz-Zippel style sampled evaluation).

Design notes:

- Normalization is deliberately weak: constant folding, 0/1 identities,
  double negation, and flattening of associative chains.  Nothing else.
  Zero recognition is the job of ``is_zero``, which samples random points;
  structural equality is not a semantic decision procedure.
- Constants are exact ``Fraction`` values; floats appear only at evaluation.
- Expression nodes are immutable and hashable; every function here is pure.
  Randomness is always driven by a caller-supplied seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt", "tanh")

ZERO_TOL = 1e-10      # |value| below this counts as zero in sampled tests
RESAMPLE_LIMIT = 10   # redraws per trial when a sample point hits a domain error


class ExprError(Exception):
    """Base class for expression-engine errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownSymbolError(ExprError):
    def __init__(self, name: str, offset: int = -1):
        at = f" (at offset {offset})" if offset >= 0 else ""
        super().__init__(f"unknown symbol '{name}'{at}")
        self.name = name


class EvalError(ExprError):
    """Evaluation failed at the given point."""


class DivisionByZeroError(EvalError):
    pass


class DomainError(EvalError):
    pass


class SampleExhaustedError(ExprError):
    """No valid sample point found within the retry budget."""


class Expr:
    """Base node. Subclasses are immutable; arithmetic builds normalized trees."""

    __slots__ = ("_hash", "_free", "_size")

    def __add__(self, other):
        return add_node(self, _as_expr(other))

    def __radd__(self, other):
        return add_node(_as_expr(other), self)

    def __sub__(self, other):
        return add_node(self, neg_node(_as_expr(other)))

    def __rsub__(self, other):
        return add_node(_as_expr(other), neg_node(self))

    def __mul__(self, other):
        return mul_node(self, _as_expr(other))

    def __rmul__(self, other):
        return mul_node(_as_expr(other), self)

    def __truediv__(self, other):
        return div_node(self, _as_expr(other))

    def __rtruediv__(self, other):
        return div_node(_as_expr(other), self)

    def __pow__(self, k: int):
        return pow_node(self, k)

    def __neg__(self):
        return neg_node(self)

    def _key(self):
        raise NotImplementedError

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        h = getattr(self, "_hash", None)
        if h is None:
            h = hash((type(self).__name__, self._key()))
            object.__setattr__(self, "_hash", h)
        return h

    def __repr__(self):
        return f"<{type(self).__name__} {to_string(self)}>"


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        object.__setattr__(self, "value", Fraction(value))

    def __setattr__(self, *a):
        raise AttributeError("Expr nodes are immutable")

    def _key(self):
        return self.value


class Sym(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        object.__setattr__(self, "name", name)

    def __setattr__(self, *a):
        raise AttributeError("Expr nodes are immutable")

    def _key(self):
        return self.name


class Neg(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg: Expr):
        object.__setattr__(self, "arg", arg)

    def __setattr__(self, *a):
        raise AttributeError("Expr nodes are immutable")

    def _key(self):
        return self.arg


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms: tuple):
        object.__setattr__(self, "terms", terms)

    def __setattr__(self, *a):
        raise AttributeError("Expr nodes are immutable")

    def _key(self):
        return self.terms


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors: tuple):
        object.__setattr__(self, "factors", factors)

    def __setattr__(self, *a):
        raise AttributeError("Expr nodes are immutable")

    def _key(self):
        return self.factors


class Div(Expr):
    __slots__ = ("num", "den")

    def __init__(self, num: Expr, den: Expr):
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    def __setattr__(self, *a):
        raise AttributeError("Expr nodes are immutable")

    def _key(self):
        return (self.num, self.den)


class Pow(Expr):
    __slots__ = ("base", "exponent")

    def __init__(self, base: Expr, exponent: int):
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "exponent", int(exponent))

    def __setattr__(self, *a):
        raise AttributeError("Expr nodes are immutable")

    def _key(self):
        return (self.base, self.exponent)


class Func(Expr):
    __slots__ = ("name", "arg")

    def __init__(self, name: str, arg: Expr):
        if name not in FUNCTIONS:
            raise ExprError(f"unsupported function '{name}'")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "arg", arg)

    def __setattr__(self, *a):
        raise AttributeError("Expr nodes are immutable")

    def _key(self):
        return (self.name, self.arg)


ZERO = Const(0)
ONE = Const(1)


def _as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, Fraction)):
        return Const(v)
    if isinstance(v, float):
        return Const(Fraction(v).limit_denominator(10**12))
    raise TypeError(f"cannot coerce {type(v).__name__} to Expr")


# -- normalizing constructors ------------------------------------------------
#
# Each constructor assumes its arguments are already normalized and returns a
# normalized node, so `normalize` is a bottom-up rebuild and idempotent.

def add_node(*terms: Expr) -> Expr:
    flat: list[Expr] = []
    const = Fraction(0)
    for t in terms:
        if isinstance(t, Add):
            parts: Iterable[Expr] = t.terms
        else:
            parts = (t,)
        for p in parts:
            if isinstance(p, Const):
                const += p.value
            else:
                flat.append(p)
    if const != 0:
        flat.append(Const(const))
    if not flat:
        return ZERO
    if len(flat) == 1:
        return flat[0]
    return Add(tuple(flat))


def mul_node(*factors: Expr) -> Expr:
    flat: list[Expr] = []
    const = Fraction(1)
    for f in factors:
        if isinstance(f, Mul):
            parts: Iterable[Expr] = f.factors
        else:
            parts = (f,)
        for p in parts:
            if isinstance(p, Const):
                const *= p.value
            else:
                flat.append(p)
    if const == 0:
        return ZERO
    if const != 1:
        flat.insert(0, Const(const))
    if not flat:
        return ONE
    if len(flat) == 1:
        return flat[0]
    return Mul(tuple(flat))


def neg_node(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def div_node(num: Expr, den: Expr) -> Expr:
    if isinstance(den, Const) and den.value != 0:
        if isinstance(num, Const):
            return Const(num.value / den.value)
        if den.value == 1:
            return num
    if isinstance(num, Const) and num.value == 0:
        if not (isinstance(den, Const) and den.value == 0):
            return ZERO
    return Div(num, den)


def pow_node(base: Expr, exponent: int) -> Expr:
    exponent = int(exponent)
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if isinstance(base, Const) and not (base.value == 0 and exponent < 0):
        return Const(base.value ** exponent)
    return Pow(base, exponent)


def func_node(name: str, arg: Expr) -> Expr:
    return Func(name, arg)


def normalize(e: Expr) -> Expr:
    """Rebuild bottom-up through the normalizing constructors (idempotent)."""
    if isinstance(e, (Const, Sym)):
        return e
    if isinstance(e, Neg):
        return neg_node(normalize(e.arg))
    if isinstance(e, Add):
        return add_node(*[normalize(t) for t in e.terms])
    if isinstance(e, Mul):
        return mul_node(*[normalize(f) for f in e.factors])
    if isinstance(e, Div):
        return div_node(normalize(e.num), normalize(e.den))
    if isinstance(e, Pow):
        return pow_node(normalize(e.base), e.exponent)
    if isinstance(e, Func):
        return func_node(e.name, normalize(e.arg))
    raise TypeError(f"not an Expr: {e!r}")


def free_symbols(e: Expr) -> frozenset[str]:
    cached = getattr(e, "_free", None)
    if cached is not None:
        return cached
    if isinstance(e, Const):
        out: frozenset[str] = frozenset()
    elif isinstance(e, Sym):
        out = frozenset((e.name,))
    elif isinstance(e, Neg):
        out = free_symbols(e.arg)
    elif isinstance(e, Add):
        out = frozenset().union(*[free_symbols(t) for t in e.terms])
    elif isinstance(e, Mul):
        out = frozenset().union(*[free_symbols(f) for f in e.factors])
    elif isinstance(e, Div):
        out = free_symbols(e.num) | free_symbols(e.den)
    elif isinstance(e, Pow):
        out = free_symbols(e.base)
    elif isinstance(e, Func):
        out = free_symbols(e.arg)
    else:
        raise TypeError(f"not an Expr: {e!r}")
    object.__setattr__(e, "_free", out)
    return out


def node_count(e: Expr) -> int:
    cached = getattr(e, "_size", None)
    if cached is not None:
        return cached
    if isinstance(e, (Const, Sym)):
        n = 1
    elif isinstance(e, Neg):
        n = 1 + node_count(e.arg)
    elif isinstance(e, Add):
        n = 1 + sum(node_count(t) for t in e.terms)
    elif isinstance(e, Mul):
        n = 1 + sum(node_count(f) for f in e.factors)
    elif isinstance(e, Div):
        n = 1 + node_count(e.num) + node_count(e.den)
    elif isinstance(e, Pow):
        n = 1 + node_count(e.base)
    elif isinstance(e, Func):
        n = 1 + node_count(e.arg)
    else:
        raise TypeError(f"not an Expr: {e!r}")
    object.__setattr__(e, "_size", n)
    return n


def is_const(e: Expr) -> bool:
    return isinstance(e, Const)


def const_value(e: Expr) -> Fraction:
    if not isinstance(e, Const):
        raise ExprError("not a constant expression")
    return e.value


# -- evaluation ----------------------------------------------------------------

def eval_expr(e: Expr, env: Mapping[str, float]) -> float:
    """Evaluate at a point; raises DivisionByZeroError / DomainError."""
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, Sym):
        try:
            return float(env[e.name])
        except KeyError:
            raise UnknownSymbolError(e.name) from None
    if isinstance(e, Neg):
        return -eval_expr(e.arg, env)
    if isinstance(e, Add):
        return math.fsum(eval_expr(t, env) for t in e.terms)
    if isinstance(e, Mul):
        out = 1.0
        for f in e.factors:
            out *= eval_expr(f, env)
        return out
    if isinstance(e, Div):
        den = eval_expr(e.den, env)
        if den == 0.0:
            raise DivisionByZeroError(f"division by zero in {to_string(e)}")
        return eval_expr(e.num, env) / den
    if isinstance(e, Pow):
        base = eval_expr(e.base, env)
        if base == 0.0 and e.exponent < 0:
            raise DivisionByZeroError("zero raised to a negative power")
        try:
            return float(base ** e.exponent)
        except OverflowError:
            return math.inf if (base > 0 or e.exponent % 2 == 0) else -math.inf
    if isinstance(e, Func):
        x = eval_expr(e.arg, env)
        if e.name == "sin":
            return math.sin(x)
        if e.name == "cos":
            return math.cos(x)
        if e.name == "exp":
            try:
                return math.exp(x)
            except OverflowError:
                return math.inf
        if e.name == "ln":
            if x <= 0.0:
                raise DomainError(f"ln of non-positive value {x}")
            return math.log(x)
        if e.name == "sqrt":
            if x < 0.0:
                raise DomainError(f"sqrt of negative value {x}")
            return math.sqrt(x)
        if e.name == "tanh":
            return math.tanh(x)
    raise TypeError(f"not an Expr: {e!r}")


def compile_expr(e: Expr, order: tuple[str, ...]) -> Callable[[np.ndarray], float]:
    """Compile to a fast callable taking a value vector in symbol `order`.

    Same semantics as eval_expr (Python math raises on domain violations);
    intended for hot loops like simulation and oracle sampling.
    """
    index = {name: i for i, name in enumerate(order)}

    def emit(node: Expr) -> str:
        if isinstance(node, Const):
            return repr(float(node.value))
        if isinstance(node, Sym):
            return f"_v[{index[node.name]}]"
        if isinstance(node, Neg):
            return f"(-{emit(node.arg)})"
        if isinstance(node, Add):
            return "(" + "+".join(emit(t) for t in node.terms) + ")"
        if isinstance(node, Mul):
            return "(" + "*".join(emit(f) for f in node.factors) + ")"
        if isinstance(node, Div):
            return f"({emit(node.num)}/{emit(node.den)})"
        if isinstance(node, Pow):
            return f"({emit(node.base)}**{node.exponent})"
        if isinstance(node, Func):
            fn = "log" if node.name == "ln" else node.name
            return f"_m.{fn}({emit(node.arg)})"
        raise TypeError(f"not an Expr: {node!r}")

    return eval(f"lambda _v, _m=math: {emit(e)}", {"math": math})


# -- differentiation -----------------------------------------------------------

def diff_expr(e: Expr, name: str) -> Expr:
    """Symbolic partial derivative with respect to the symbol `name`."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Sym):
        return ONE if e.name == name else ZERO
    if isinstance(e, Neg):
        return neg_node(diff_expr(e.arg, name))
    if isinstance(e, Add):
        return add_node(*[diff_expr(t, name) for t in e.terms])
    if isinstance(e, Mul):
        terms = []
        fs = e.factors
        for i, f in enumerate(fs):
            df = diff_expr(f, name)
            if isinstance(df, Const) and df.value == 0:
                continue
            terms.append(mul_node(*fs[:i], df, *fs[i + 1:]))
        return add_node(*terms)
    if isinstance(e, Div):
        dn = diff_expr(e.num, name)
        dd = diff_expr(e.den, name)
        num = add_node(mul_node(dn, e.den), neg_node(mul_node(e.num, dd)))
        return div_node(num, pow_node(e.den, 2))
    if isinstance(e, Pow):
        db = diff_expr(e.base, name)
        return mul_node(Const(e.exponent), pow_node(e.base, e.exponent - 1), db)
    if isinstance(e, Func):
        dx = diff_expr(e.arg, name)
        x = e.arg
        if e.name == "sin":
            outer: Expr = func_node("cos", x)
        elif e.name == "cos":
            outer = neg_node(func_node("sin", x))
        elif e.name == "exp":
            outer = e
        elif e.name == "ln":
            outer = div_node(ONE, x)
        elif e.name == "sqrt":
            outer = div_node(ONE, mul_node(Const(2), e))
        elif e.name == "tanh":
            outer = add_node(ONE, neg_node(pow_node(e, 2)))
        else:
            raise ExprError(f"unsupported function '{e.name}'")
        return mul_node(outer, dx)
    raise TypeError(f"not an Expr: {e!r}")


# -- symbol table --------------------------------------------------------------

@dataclass(frozen=True)
class SymbolTable:
    """Ordered state symbols plus named parameters with optional bound values.

    The state ordering is fixed for the lifetime of a model; state names and
    parameter names must be disjoint.
    """

    states: tuple[str, ...] = ()
    parameters: tuple[tuple[str, float | None], ...] = ()

    def __post_init__(self):
        seen = set()
        for s in self.states:
            if s in seen:
                raise ExprError(f"duplicate state symbol '{s}'")
            seen.add(s)
        for p, _ in self.parameters:
            if p in seen:
                raise ExprError(f"symbol '{p}' declared more than once")
            seen.add(p)

    @property
    def parameter_names(self) -> tuple[str, ...]:
        return tuple(p for p, _ in self.parameters)

    def bindings(self) -> dict[str, float]:
        return {p: v for p, v in self.parameters if v is not None}

    def has_symbol(self, name: str) -> bool:
        return name in self.states or name in self.parameter_names

    def all_symbols(self) -> tuple[str, ...]:
        return self.states + self.parameter_names


def sample_env(symbols: Iterable[str], rng: np.random.Generator,
               bindings: Mapping[str, float] | None = None) -> dict[str, float]:
    """One random point: bound parameters fixed, the rest uniform on [-1, 1]."""
    bindings = bindings or {}
    env = {}
    for s in symbols:
        if s in bindings:
            env[s] = float(bindings[s])
        else:
            env[s] = float(rng.uniform(-1.0, 1.0))
    return env


def is_zero(e: Expr, trials: int = 20, seed: int = 0,
            table: SymbolTable | None = None) -> bool:
    """Probabilistic zero test: True iff |e| <= 1e-10 at `trials` random points.

    Points are drawn uniformly from [-1, 1]^n over the unbound symbols (bound
    parameter values are substituted).  A point hitting a division-by-zero or
    function-domain error is redrawn, at most 10 times per trial; running out
    of valid points raises SampleExhaustedError.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    symbols = sorted(free_symbols(e))
    if not symbols:
        try:
            return abs(eval_expr(e, {})) <= ZERO_TOL
        except EvalError as err:
            raise SampleExhaustedError(str(err)) from err
    bindings = table.bindings() if table is not None else {}
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        for attempt in range(RESAMPLE_LIMIT + 1):
            env = sample_env(symbols, rng, bindings)
            try:
                v = eval_expr(e, env)
            except EvalError:
                continue
            if not math.isfinite(v):
                continue
            if abs(v) > ZERO_TOL:
                return False
            break
        else:
            raise SampleExhaustedError(
                f"no valid sample point for {to_string(e)} after "
                f"{RESAMPLE_LIMIT + 1} attempts")
    return True


# -- printing ------------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(e: Expr) -> int:
    if isinstance(e, Add):
        return _PREC_ADD
    if isinstance(e, (Mul, Div)):
        return _PREC_MUL
    if isinstance(e, Neg):
        return _PREC_UNARY
    if isinstance(e, Pow):
        return _PREC_POW
    if isinstance(e, Const) and (e.value < 0 or e.value.denominator != 1):
        return _PREC_MUL  # prints as a quotient / negative literal
    return _PREC_ATOM


def _wrap(e: Expr, parent_prec: int) -> str:
    s = to_string(e)
    if _prec(e) < parent_prec:
        return f"({s})"
    return s


def to_string(e: Expr) -> str:
    """Render in the input grammar (parse_expr(to_string(e)) re-reads it)."""
    if isinstance(e, Const):
        v = e.value
        if v.denominator == 1:
            return str(v.numerator)
        return f"{v.numerator}/{v.denominator}"
    if isinstance(e, Sym):
        return e.name
    if isinstance(e, Neg):
        # '-' binds tighter than '^' in the grammar, so a Pow argument needs
        # parentheses to survive a round trip
        return "-" + _wrap(e.arg, _PREC_ATOM)
    if isinstance(e, Add):
        out = _wrap(e.terms[0], _PREC_ADD)
        for t in e.terms[1:]:
            if isinstance(t, Neg):
                out += " - " + _wrap(t.arg, _PREC_ADD + 1)
            elif isinstance(t, Const) and t.value < 0:
                out += " - " + to_string(Const(-t.value))
            else:
                out += " + " + _wrap(t, _PREC_ADD + 1)
        return out
    if isinstance(e, Mul):
        return "*".join(_wrap(f, _PREC_MUL + 1) for f in e.factors)
    if isinstance(e, Div):
        return _wrap(e.num, _PREC_MUL + 1) + "/" + _wrap(e.den, _PREC_MUL + 1)
    if isinstance(e, Pow):
        return _wrap(e.base, _PREC_ATOM) + "^" + str(e.exponent)
    if isinstance(e, Func):
        return f"{e.name}({to_string(e.arg)})"
    raise TypeError(f"not an Expr: {e!r}")


# -- parser --------------------------------------------------------------------
#
# expr   := term (('+'|'-') term)*
# term   := factor (('*'|'/') factor)*
# factor := base ('^' integer)?
# base   := number | symbol | func '(' expr ')' | '(' expr ')' | '-' base

class _Parser:
    def __init__(self, text: str, table: SymbolTable):
        self.text = text
        self.pos = 0
        self.table = table

    def error(self, message: str):
        raise ExprSyntaxError(message, self.pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str):
        if self.peek() != ch:
            self.error(f"expected '{ch}'")
        self.pos += 1

    def parse(self) -> Expr:
        e = self.expr()
        self.skip_ws()
        if self.pos != len(self.text):
            self.error("unexpected trailing input")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            op = self.peek()
            if op == "+":
                self.pos += 1
                e = add_node(e, self.term())
            elif op == "-":
                self.pos += 1
                e = add_node(e, neg_node(self.term()))
            else:
                return e

    def term(self) -> Expr:
        e = self.factor()
        while True:
            op = self.peek()
            if op == "*":
                self.pos += 1
                e = mul_node(e, self.factor())
            elif op == "/":
                self.pos += 1
                e = div_node(e, self.factor())
            else:
                return e

    def factor(self) -> Expr:
        e = self.base()
        if self.peek() == "^":
            self.pos += 1
            e = pow_node(e, self.integer())
        return e

    def integer(self) -> int:
        self.skip_ws()
        start = self.pos
        if self.peek() == "-":
            self.pos += 1
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos == start or not self.text[start:self.pos].lstrip("-"):
            self.pos = start
            self.error("expected integer exponent")
        return int(self.text[start:self.pos])

    def base(self) -> Expr:
        ch = self.peek()
        if ch == "-":
            self.pos += 1
            return neg_node(self.base())
        if ch == "(":
            self.pos += 1
            e = self.expr()
            self.expect(")")
            return e
        if ch.isdigit() or ch == ".":
            return self.number()
        if ch.isalpha() or ch == "_":
            return self.symbol_or_func()
        self.error("expected number, symbol, or '('")

    def number(self) -> Expr:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos < len(self.text) and self.text[self.pos] == ".":
            self.pos += 1
            while self.pos < len(self.text) and self.text[self.pos].isdigit():
                self.pos += 1
        token = self.text[start:self.pos]
        if token in (".", ""):
            self.pos = start
            self.error("malformed number")
        return Const(Fraction(token))

    def symbol_or_func(self) -> Expr:
        start = self.pos
        while self.pos < len(self.text) and (
                self.text[self.pos].isalnum() or self.text[self.pos] == "_"):
            self.pos += 1
        name = self.text[start:self.pos]
        if name in FUNCTIONS and self.peek() == "(":
            self.pos += 1
            arg = self.expr()
            self.expect(")")
            return func_node(name, arg)
        if not self.table.has_symbol(name):
            raise UnknownSymbolError(name, start)
        return Sym(name)


def parse_expr(text: str, table: SymbolTable) -> Expr:
    """Parse `text` against the symbol table; result is normalized."""
    return _Parser(text, table).parse()
