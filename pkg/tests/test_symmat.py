import numpy as np
import pytest

from bg2phs.expr import Const, Sym, SymbolTable, parse_expr
from bg2phs.symmat import (
    BlockLayout, PivotAmbiguityError, ShapeError, SingularMatrixError,
    SymMatrix, add, block_diag, eval_matrix, from_rows, generic_rank, hcat,
    identity, matmul, matrices_equal_sampled, numeric_rank, scale, sub,
    symbolic_inverse, symbolic_nullspace, transpose, vcat, zeros,
)

TABLE = SymbolTable(states=("x1", "x2"))


def _num(m: np.ndarray) -> SymMatrix:
    return from_rows([[Const(v) for v in row] for row in m.tolist()])


def test_identity_multiplication():
    rng = np.random.default_rng(0)
    a = _num(rng.uniform(-1, 1, (2, 2)))
    assert matmul(identity(2), a) == a
    assert matmul(a, identity(2)) == a


def test_double_transpose():
    rng = np.random.default_rng(1)
    a = _num(rng.uniform(-1, 1, (3, 2)))
    assert transpose(transpose(a)) == a


def test_hcat_shape():
    a = zeros(2, 1)
    b = zeros(2, 2)
    assert hcat([a, b]).shape == (2, 3)


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match="2x3.*3x3|3x3.*2x3"):
        matmul(zeros(3, 3), zeros(2, 3))
    with pytest.raises(ShapeError):
        add(zeros(2, 2), zeros(3, 2))


def test_matrix_arithmetic_matches_numpy():
    rng = np.random.default_rng(2)
    for _ in range(20):
        am = rng.uniform(-1, 1, (3, 4))
        bm = rng.uniform(-1, 1, (4, 2))
        prod = eval_matrix(matmul(_num(am), _num(bm)), {})
        assert np.allclose(prod, am @ bm, atol=1e-12)
    am = rng.uniform(-1, 1, (3, 3))
    bm = rng.uniform(-1, 1, (3, 3))
    assert np.allclose(eval_matrix(sub(_num(am), _num(bm)), {}), am - bm)
    assert np.allclose(eval_matrix(scale(_num(am), Const(3)), {}), 3 * am)


def test_block_diag_and_vcat():
    a = identity(2)
    b = zeros(1, 3)
    d = block_diag([a, b])
    assert d.shape == (3, 5)
    assert eval_matrix(d, {})[:2, :2].tolist() == [[1, 0], [0, 1]]
    v = vcat([zeros(1, 2), identity(2)])
    assert v.shape == (3, 2)


def test_generic_rank_identity_and_zero():
    assert generic_rank(identity(3)) == 3
    assert generic_rank(zeros(4, 2)) == 0
    assert generic_rank(zeros(0, 5)) == 0


def test_generic_rank_rank_one_symbolic():
    # oracle: evaluate at 5 explicit points, numeric rank of each, take max
    x = Sym("x1")
    a = from_rows([[x, x], [x, x]])
    oracle = 0
    for v in (-0.9, -0.3, 0.2, 0.5, 1.0):
        m = np.array([[v, v], [v, v]])
        oracle = max(oracle, numeric_rank(m))
    assert oracle == 1
    assert generic_rank(a, trials=5, seed=3) == oracle


def test_generic_rank_matches_svd_on_random_numeric():
    rng = np.random.default_rng(4)
    for _ in range(200):
        r = int(rng.integers(1, 5))
        c = int(rng.integers(1, 5))
        m = rng.uniform(-1, 1, (r, c))
        if rng.uniform() < 0.4:
            # force rank deficiency through an outer product
            k = int(rng.integers(1, min(r, c) + 1))
            m = rng.uniform(-1, 1, (r, k)) @ rng.uniform(-1, 1, (k, c))
        expected = np.linalg.matrix_rank(m)
        assert generic_rank(_num(m), trials=3, seed=5) == expected


def test_nullspace_identity_is_empty():
    b = symbolic_nullspace(identity(3))
    assert b.shape == (3, 0)


def test_nullspace_single_constraint():
    b = symbolic_nullspace(from_rows([[Const(1), Const(1)]]))
    assert b.shape == (2, 1)
    v = eval_matrix(b, {})
    # spans {(1, -1)} up to scaling
    assert abs(v[0, 0] + v[1, 0]) < 1e-12 and abs(v[0, 0]) > 1e-12


def test_nullspace_symbolic_modulated():
    u = Sym("u")
    table = SymbolTable(parameters=(("u", None),))
    a = from_rows([[Const(1), u]])
    b = symbolic_nullspace(a, table=table)
    assert b.shape == (2, 1)
    # residual sampling: a(x) @ b(x) = 0 at 20 points
    rng = np.random.default_rng(6)
    for _ in range(20):
        env = {"u": float(rng.uniform(-1, 1))}
        assert np.max(np.abs(eval_matrix(a, env) @ eval_matrix(b, env))) < 1e-8


def test_nullspace_random_postconditions():
    rng = np.random.default_rng(7)
    for trial in range(30):
        r = int(rng.integers(1, 5))
        c = int(rng.integers(1, 6))
        k = int(rng.integers(0, min(r, c) + 1))
        m = rng.uniform(-1, 1, (r, k)) @ rng.uniform(-1, 1, (k, c)) \
            if k else np.zeros((r, c))
        a = _num(m)
        b = symbolic_nullspace(a, seed=trial)
        assert b.cols == c - generic_rank(a)
        if b.cols:
            bm = eval_matrix(b, {})
            assert np.max(np.abs(m @ bm)) < 1e-8
            assert np.linalg.matrix_rank(bm) == b.cols


def test_inverse_identity_and_diagonal():
    assert symbolic_inverse(identity(3)) == identity(3)
    d = from_rows([[Const(2), Const(0)], [Const(0), Const(4)]])
    inv = eval_matrix(symbolic_inverse(d), {})
    assert np.allclose(inv, np.diag([0.5, 0.25]))


def test_inverse_symbolic_skew_block():
    u = Sym("u")
    table = SymbolTable(parameters=(("u", None),))
    a = from_rows([[Const(0), u], [Const(0) - u, Const(0)]])
    inv = symbolic_inverse(a, table=table)
    rng = np.random.default_rng(8)
    for _ in range(20):
        env = {"u": float(rng.uniform(0.2, 1.0))}
        am = eval_matrix(a, env)
        xm = eval_matrix(inv, env)
        assert np.max(np.abs(am @ xm - np.eye(2))) < 1e-8
        expected = np.array([[0, -1 / env["u"]], [1 / env["u"], 0]])
        assert np.allclose(xm, expected, atol=1e-9)


def test_inverse_random_postconditions():
    rng = np.random.default_rng(9)
    for trial in range(30):
        n = int(rng.integers(1, 6))
        m = rng.uniform(-1, 1, (n, n)) + np.eye(n) * 2
        inv = symbolic_inverse(_num(m), seed=trial)
        assert np.max(np.abs(eval_matrix(inv, {}) @ m - np.eye(n))) < 1e-8


def test_inverse_singularity_error():
    a = from_rows([[Const(1), Const(2)], [Const(2), Const(4)]])
    with pytest.raises(SingularMatrixError):
        symbolic_inverse(a)
    with pytest.raises(ShapeError):
        symbolic_inverse(zeros(2, 3))


def test_empty_matrices_are_first_class():
    e = zeros(0, 3)
    assert matmul(e, zeros(3, 2)).shape == (0, 2)
    assert matmul(zeros(2, 0), zeros(0, 3)) == zeros(2, 3)
    assert transpose(e).shape == (3, 0)
    assert symbolic_nullspace(zeros(0, 4)) == identity(4)
    assert hcat([zeros(2, 0), identity(2)]) == identity(2)
    assert generic_rank(matmul(zeros(2, 0), zeros(0, 2))) == 0


def test_elimination_handles_probable_zero_fill():
    # entries that cancel only semantically must not be picked as pivots
    u = Sym("u")
    table = SymbolTable(parameters=(("u", None),))
    cancel = u - u  # stays a non-constant tree after weak normalization
    a = from_rows([[cancel, Const(1)], [Const(1), u]])
    b = symbolic_nullspace(a, table=table)
    assert b.shape == (2, 0)
    inv = symbolic_inverse(a, table=table)
    rng = np.random.default_rng(10)
    for _ in range(10):
        env = {"u": float(rng.uniform(-1, 1))}
        assert np.max(np.abs(eval_matrix(a, env) @ eval_matrix(inv, env)
                             - np.eye(2))) < 1e-8


def test_block_layout():
    lay = BlockLayout(("C", "R", "P"), (2, 1, 3))
    assert lay.total == 6
    assert lay.range_of("R") == range(2, 3)
    assert lay.span_of("P") == 3
    with pytest.raises(Exception):
        BlockLayout(("a", "a"), (1, 2))


def test_matrices_equal_sampled():
    x = Sym("x1")
    a = from_rows([[x * x]])
    b = from_rows([[x ** 2]])
    assert matrices_equal_sampled(a, b, points=20, seed=0)
    c = from_rows([[x ** 2 + Const(1)]])
    assert not matrices_equal_sampled(a, c, points=20, seed=0)
