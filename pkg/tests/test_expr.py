import math
from fractions import Fraction

import numpy as np
import pytest

from bg2phs.expr import (
    Const, Sym, SymbolTable,
    DivisionByZeroError, DomainError, ExprSyntaxError, SampleExhaustedError,
    UnknownSymbolError,
    add_node, compile_expr, diff_expr, div_node, eval_expr, free_symbols,
    func_node, is_zero, mul_node, neg_node, normalize, parse_expr, pow_node,
    to_string,
)

TABLE = SymbolTable(states=("x1", "x2"), parameters=(("k", None), ("c", 2.0)))


def test_parse_literal_zero():
    e = parse_expr("0", TABLE)
    assert e == Const(0)


def test_parse_power_then_divide():
    e = parse_expr("x1^2/2", TABLE)
    assert eval_expr(e, {"x1": 2.0}) == pytest.approx(2.0)


def test_parse_sin_times_parameter():
    e = parse_expr("sin(x1)*k", TABLE)
    for k in (-3.0, 0.5, 7.0):
        assert eval_expr(e, {"x1": 0.0, "k": k}) == 0.0


def test_parse_respects_precedence():
    e = parse_expr("1 + 2*x1^2", TABLE)
    assert eval_expr(e, {"x1": 3.0}) == pytest.approx(19.0)


def test_parse_decimal_is_exact():
    e = parse_expr("0.25", TABLE)
    assert e == Const(Fraction(1, 4))


def test_parse_syntax_error_carries_offset():
    with pytest.raises(ExprSyntaxError) as err:
        parse_expr("x1 + *2", TABLE)
    assert err.value.offset == 5


def test_parse_unknown_symbol_named():
    with pytest.raises(UnknownSymbolError) as err:
        parse_expr("x1 + y", TABLE)
    assert err.value.name == "y"


def test_eval_sum():
    e = parse_expr("x1 + x2", TABLE)
    assert eval_expr(e, {"x1": 1.0, "x2": 2.0}) == 3.0


def test_eval_division_by_zero():
    e = parse_expr("1/x1", TABLE)
    with pytest.raises(DivisionByZeroError):
        eval_expr(e, {"x1": 0.0})


def test_eval_exp_zero():
    e = parse_expr("exp(0)", TABLE)
    assert eval_expr(e, {}) == 1.0


def test_eval_domain_errors():
    with pytest.raises(DomainError):
        eval_expr(parse_expr("ln(x1)", TABLE), {"x1": -1.0})
    with pytest.raises(DomainError):
        eval_expr(parse_expr("sqrt(x1)", TABLE), {"x1": -4.0})


def test_diff_quadratic():
    e = parse_expr("x1^2/2", TABLE)
    d = diff_expr(e, "x1")
    for v in (-2.0, 0.0, 1.5):
        assert eval_expr(d, {"x1": v}) == pytest.approx(v)


def test_diff_other_symbol_is_zero():
    assert diff_expr(parse_expr("x2", TABLE), "x1") == Const(0)


def test_diff_sin_at_zero():
    d = diff_expr(parse_expr("sin(x1)", TABLE), "x1")
    assert eval_expr(d, {"x1": 0.0}) == pytest.approx(1.0)


def test_is_zero_cancellation():
    e = parse_expr("x1 - x1", TABLE)
    assert is_zero(e, trials=20, seed=1)


def test_is_zero_commutativity():
    e = parse_expr("x1*x2 - x2*x1", TABLE)
    assert is_zero(e, trials=20, seed=1)


def test_is_zero_rejects_nonzero():
    assert not is_zero(parse_expr("x1", TABLE), trials=20, seed=1)


def test_is_zero_uses_bound_parameters():
    e = parse_expr("c - 2", TABLE)
    assert is_zero(e, trials=5, seed=0, table=TABLE)


def test_is_zero_exhaustion():
    e = parse_expr("ln(-1 - x1^2)", TABLE)
    with pytest.raises(SampleExhaustedError):
        is_zero(e, trials=5, seed=0)


def test_normalize_idempotent_and_congruent():
    rng = np.random.default_rng(7)
    for _ in range(200):
        e = _random_expr(rng, depth=4, funcs=True)
        n1 = normalize(e)
        assert normalize(n1) == n1
        # structurally equal inputs give structurally equal outputs
        assert normalize(e) == n1


def test_normalize_identities():
    x = Sym("x1")
    assert normalize(add_node(x, Const(0))) == x
    assert normalize(mul_node(Const(1), x)) == x
    assert normalize(mul_node(Const(0), x)) == Const(0)
    assert normalize(neg_node(neg_node(x))) == x
    assert normalize(pow_node(x, 1)) == x
    assert normalize(div_node(x, Const(1))) == x


def test_to_string_round_trip():
    rng = np.random.default_rng(11)
    for _ in range(200):
        e = _random_expr(rng, depth=4, funcs=True)
        s = to_string(e)
        again = parse_expr(s, TABLE)
        assert again == normalize(e)


def _random_expr(rng, depth, funcs=False):
    """Random expression tree over x1, x2, k with small rational constants."""
    if depth == 0 or rng.uniform() < 0.25:
        if rng.uniform() < 0.5:
            return Const(Fraction(int(rng.integers(-4, 5)),
                                  int(rng.integers(1, 4))))
        return Sym(str(rng.choice(["x1", "x2", "k"])))
    kind = rng.integers(0, 6 if funcs else 5)
    a = _random_expr(rng, depth - 1, funcs)
    b = _random_expr(rng, depth - 1, funcs)
    if kind == 0:
        return add_node(a, b)
    if kind == 1:
        return add_node(a, neg_node(b))
    if kind == 2:
        return mul_node(a, b)
    if kind == 3:
        return neg_node(a)
    if kind == 4:
        return pow_node(a, int(rng.integers(1, 4)))
    return func_node(str(rng.choice(["sin", "cos", "tanh"])), a)


def _random_polynomial(rng, depth):
    """Polynomial-only tree (total function, no poles) for derivative checks."""
    if depth == 0 or rng.uniform() < 0.3:
        if rng.uniform() < 0.4:
            return Const(Fraction(int(rng.integers(-3, 4)),
                                  int(rng.integers(1, 4))))
        return Sym(str(rng.choice(["x1", "x2"])))
    kind = rng.integers(0, 4)
    a = _random_polynomial(rng, depth - 1)
    b = _random_polynomial(rng, depth - 1)
    if kind == 0:
        return add_node(a, b)
    if kind == 1:
        return add_node(a, neg_node(b))
    if kind == 2:
        return mul_node(a, b)
    return pow_node(a, int(rng.integers(1, 3)))


def test_derivative_matches_central_differences():
    # oracle: central finite differences with h = 1e-6
    rng = np.random.default_rng(2024)
    h = 1e-6
    for _ in range(1000):
        e = _random_polynomial(rng, depth=int(rng.integers(1, 7)))
        d = diff_expr(e, "x1")
        for _ in range(10):
            env = {"x1": float(rng.uniform(-1, 1)),
                   "x2": float(rng.uniform(-1, 1))}
            up = eval_expr(e, {**env, "x1": env["x1"] + h})
            dn = eval_expr(e, {**env, "x1": env["x1"] - h})
            fd = (up - dn) / (2 * h)
            sym = eval_expr(d, env)
            assert abs(sym - fd) <= 1e-5 * (1 + abs(sym))


def test_is_zero_never_true_on_nonzero_corpus():
    # regression corpus: 50 random nonzero rational expressions, seed-pinned
    rng = np.random.default_rng(99)
    corpus = []
    while len(corpus) < 50:
        e = _random_polynomial(rng, depth=3)
        e = div_node(e, add_node(Const(2), pow_node(Sym("x1"), 2)))
        try:
            if any(abs(eval_expr(e, {"x1": v, "x2": w})) > 1e-6
                   for v, w in [(0.3, -0.7), (0.9, 0.2), (-0.5, 0.8)]):
                corpus.append(e)
        except ZeroDivisionError:
            continue
    for i, e in enumerate(corpus):
        assert not is_zero(e, trials=20, seed=1000 + i)


def test_compile_expr_matches_eval():
    rng = np.random.default_rng(5)
    order = ("x1", "x2", "k")
    for _ in range(100):
        e = _random_expr(rng, depth=4, funcs=True)
        fn = compile_expr(e, order)
        v = rng.uniform(-1, 1, size=3)
        env = dict(zip(order, v))
        try:
            expected = eval_expr(e, env)
        except Exception:
            continue
        if math.isfinite(expected):
            assert fn(v) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_free_symbols():
    e = parse_expr("sin(x1)*k + x2", TABLE)
    assert free_symbols(e) == {"x1", "x2", "k"}


def test_symbol_table_rejects_duplicates():
    with pytest.raises(Exception):
        SymbolTable(states=("a", "a"))
    with pytest.raises(Exception):
        SymbolTable(states=("a",), parameters=(("a", None),))
