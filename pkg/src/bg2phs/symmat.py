"""Dense matrices of symbolic expressions and the linear algebra on them.

Provides block assembly, products, generic (sampled) rank, nullspace, and
inverse for matrices whose entries are ``expr.Expr`` values.  Rank questions
"for all x" are decided generically: the matrix is evaluated at seeded random
points and the maximum numeric rank is taken.  Elimination keeps entries
division-free as long as possible (cross-multiplication updates) and decides
entry/pivot zeroness probabilistically by carrying numeric shadow copies of
the matrix through the same row operations; results are re-verified by
residual sampling at fresh points.

Empty matrices (zero rows or columns) are first-class throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .expr import (
    Const, Expr, EvalError, ONE, SymbolTable, ZERO, ZERO_TOL,
    add_node, div_node, eval_expr, free_symbols, is_const, mul_node, neg_node,
    node_count, sample_env,
)

RANK_TOL = 1e-8        # singular values below RANK_TOL * sigma_max are zero
VERIFY_TOL = 1e-8      # residual bound for sampled postcondition checks
SHADOW_ENVS = 20       # numeric shadow copies carried through elimination
SHADOW_TOL = 1e-9      # shadow magnitude below SHADOW_TOL*scale counts as zero


class SymMatrixError(Exception):
    pass


class ShapeError(SymMatrixError):
    pass


class SingularMatrixError(SymMatrixError):
    pass


class PivotAmbiguityError(SymMatrixError):
    """Sampled rank disagreed across batches (non-generic modulation)."""


@dataclass(frozen=True)
class SymMatrix:
    rows: int
    cols: int
    entries: tuple  # row-major tuple of Expr, length rows*cols

    def __post_init__(self):
        if self.rows < 0 or self.cols < 0:
            raise ShapeError(f"negative shape {self.rows}x{self.cols}")
        if len(self.entries) != self.rows * self.cols:
            raise ShapeError(
                f"entry count {len(self.entries)} does not match shape "
                f"{self.rows}x{self.cols}")

    def get(self, i: int, j: int) -> Expr:
        return self.entries[i * self.cols + j]

    def row(self, i: int) -> tuple:
        return self.entries[i * self.cols:(i + 1) * self.cols]

    def to_lists(self) -> list[list[Expr]]:
        return [list(self.row(i)) for i in range(self.rows)]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def free_symbols(self) -> frozenset[str]:
        out: frozenset[str] = frozenset()
        for e in self.entries:
            out |= free_symbols(e)
        return out

    def __repr__(self):
        from .expr import to_string
        body = "; ".join(
            ", ".join(to_string(e) for e in self.row(i)) for i in range(self.rows))
        return f"<SymMatrix {self.rows}x{self.cols} [{body}]>"


def from_rows(rows: Sequence[Sequence]) -> SymMatrix:
    nrows = len(rows)
    ncols = len(rows[0]) if nrows else 0
    ents = []
    for r in rows:
        if len(r) != ncols:
            raise ShapeError("ragged rows")
        for e in r:
            ents.append(e if isinstance(e, Expr) else Const(e))
    return SymMatrix(nrows, ncols, tuple(ents))


def zeros(rows: int, cols: int) -> SymMatrix:
    return SymMatrix(rows, cols, (ZERO,) * (rows * cols))


def identity(n: int) -> SymMatrix:
    ents = [ZERO] * (n * n)
    for i in range(n):
        ents[i * n + i] = ONE
    return SymMatrix(n, n, tuple(ents))


def transpose(a: SymMatrix) -> SymMatrix:
    ents = []
    for j in range(a.cols):
        for i in range(a.rows):
            ents.append(a.get(i, j))
    return SymMatrix(a.cols, a.rows, tuple(ents))


def matmul(a: SymMatrix, b: SymMatrix) -> SymMatrix:
    if a.cols != b.rows:
        raise ShapeError(f"cannot multiply {a.rows}x{a.cols} by {b.rows}x{b.cols}")
    ents = []
    for i in range(a.rows):
        arow = a.row(i)
        for j in range(b.cols):
            terms = []
            for k in range(a.cols):
                x, y = arow[k], b.get(k, j)
                if (is_const(x) and x.value == 0) or (is_const(y) and y.value == 0):
                    continue
                terms.append(mul_node(x, y))
            ents.append(add_node(*terms))
    return SymMatrix(a.rows, b.cols, tuple(ents))


def add(a: SymMatrix, b: SymMatrix) -> SymMatrix:
    if a.shape != b.shape:
        raise ShapeError(f"cannot add {a.rows}x{a.cols} and {b.rows}x{b.cols}")
    return SymMatrix(a.rows, a.cols, tuple(
        add_node(x, y) for x, y in zip(a.entries, b.entries)))


def sub(a: SymMatrix, b: SymMatrix) -> SymMatrix:
    if a.shape != b.shape:
        raise ShapeError(f"cannot subtract {b.rows}x{b.cols} from {a.rows}x{a.cols}")
    return SymMatrix(a.rows, a.cols, tuple(
        add_node(x, neg_node(y)) for x, y in zip(a.entries, b.entries)))


def neg(a: SymMatrix) -> SymMatrix:
    return SymMatrix(a.rows, a.cols, tuple(neg_node(e) for e in a.entries))


def scale(a: SymMatrix, c: Expr) -> SymMatrix:
    c = c if isinstance(c, Expr) else Const(c)
    return SymMatrix(a.rows, a.cols, tuple(mul_node(c, e) for e in a.entries))


def hcat(blocks: Iterable[SymMatrix]) -> SymMatrix:
    blocks = [b for b in blocks]
    if not blocks:
        return zeros(0, 0)
    nrows = blocks[0].rows
    for b in blocks:
        if b.rows != nrows:
            raise ShapeError(
                f"hcat row mismatch: {nrows} vs {b.rows} (shapes "
                f"{[x.shape for x in blocks]})")
    ents = []
    for i in range(nrows):
        for b in blocks:
            ents.extend(b.row(i))
    return SymMatrix(nrows, sum(b.cols for b in blocks), tuple(ents))


def vcat(blocks: Iterable[SymMatrix]) -> SymMatrix:
    blocks = [b for b in blocks]
    if not blocks:
        return zeros(0, 0)
    ncols = blocks[0].cols
    for b in blocks:
        if b.cols != ncols:
            raise ShapeError(
                f"vcat column mismatch: {ncols} vs {b.cols} (shapes "
                f"{[x.shape for x in blocks]})")
    ents = []
    for b in blocks:
        ents.extend(b.entries)
    return SymMatrix(sum(b.rows for b in blocks), ncols, tuple(ents))


def block_diag(blocks: Iterable[SymMatrix]) -> SymMatrix:
    blocks = [b for b in blocks]
    nrows = sum(b.rows for b in blocks)
    ncols = sum(b.cols for b in blocks)
    ents = [ZERO] * (nrows * ncols)
    r0 = c0 = 0
    for b in blocks:
        for i in range(b.rows):
            for j in range(b.cols):
                ents[(r0 + i) * ncols + (c0 + j)] = b.get(i, j)
        r0 += b.rows
        c0 += b.cols
    return SymMatrix(nrows, ncols, tuple(ents))


def take_cols(a: SymMatrix, cols: Sequence[int]) -> SymMatrix:
    ents = []
    for i in range(a.rows):
        for j in cols:
            ents.append(a.get(i, j))
    return SymMatrix(a.rows, len(cols), tuple(ents))


def take_rows(a: SymMatrix, rows: Sequence[int]) -> SymMatrix:
    ents = []
    for i in rows:
        ents.extend(a.row(i))
    return SymMatrix(len(rows), a.cols, tuple(ents))


def submatrix(a: SymMatrix, rows: Sequence[int], cols: Sequence[int]) -> SymMatrix:
    ents = []
    for i in rows:
        for j in cols:
            ents.append(a.get(i, j))
    return SymMatrix(len(rows), len(cols), tuple(ents))


@dataclass(frozen=True)
class BlockLayout:
    """Ordered (label, span) pairs partitioning a matrix's columns (or rows)."""

    labels: tuple[str, ...]
    spans: tuple[int, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.spans):
            raise ShapeError("labels and spans differ in length")
        if len(set(self.labels)) != len(self.labels):
            raise ShapeError("duplicate block labels")
        if any(s < 0 for s in self.spans):
            raise ShapeError("negative span")

    @property
    def total(self) -> int:
        return sum(self.spans)

    def range_of(self, label: str) -> range:
        start = 0
        for lab, span in zip(self.labels, self.spans):
            if lab == label:
                return range(start, start + span)
            start += span
        raise KeyError(label)

    def span_of(self, label: str) -> int:
        return self.spans[self.labels.index(label)]


# -- numeric evaluation and sampling -------------------------------------------

def eval_matrix(a: SymMatrix, env: dict[str, float]) -> np.ndarray:
    out = np.empty((a.rows, a.cols), dtype=float)
    for i in range(a.rows):
        for j in range(a.cols):
            out[i, j] = eval_expr(a.get(i, j), env)
    return out


def sample_envs(symbols: Iterable[str], count: int, seed: int,
                table: SymbolTable | None = None,
                matrices: Sequence[SymMatrix] = ()) -> list[dict[str, float]]:
    """Draw `count` sample points; redraw points where any matrix fails to
    evaluate (domain errors), with a bounded retry budget."""
    symbols = sorted(set(symbols))
    bindings = table.bindings() if table is not None else {}
    rng = np.random.default_rng(seed)
    envs = []
    for _ in range(count):
        for _ in range(11):
            env = sample_env(symbols, rng, bindings)
            try:
                mats = [eval_matrix(m, env) for m in matrices]
            except EvalError:
                continue
            if all(np.all(np.isfinite(m)) for m in mats):
                envs.append(env)
                break
        else:
            raise SymMatrixError("no valid sample point found for matrices")
    return envs


def numeric_rank(m: np.ndarray) -> int:
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_TOL * s[0]))


def generic_rank(a: SymMatrix, trials: int = 20, seed: int = 0,
                 table: SymbolTable | None = None) -> int:
    """Maximum numeric rank over `trials` random evaluation points."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if a.rows == 0 or a.cols == 0:
        return 0
    symbols = sorted(a.free_symbols())
    bindings = table.bindings() if table is not None else {}
    rng = np.random.default_rng(seed)
    best = 0
    for _ in range(trials):
        env = sample_env(symbols, rng, bindings)
        try:
            m = eval_matrix(a, env)
        except EvalError as err:
            raise SymMatrixError(
                f"evaluation failed at sample point {env}: {err}") from err
        best = max(best, numeric_rank(m))
        if best == min(a.rows, a.cols):
            break
    return best


def matrices_equal_sampled(a: SymMatrix, b: SymMatrix, points: int = 20,
                           tol: float = VERIFY_TOL, seed: int = 0,
                           table: SymbolTable | None = None) -> bool:
    """Entrywise |a - b| <= tol at `points` seeded random evaluation points."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.rows == 0 or a.cols == 0:
        return True
    symbols = a.free_symbols() | b.free_symbols()
    envs = sample_envs(symbols, points, seed, table, (a, b))
    for env in envs:
        if np.max(np.abs(eval_matrix(a, env) - eval_matrix(b, env))) > tol:
            return False
    return True


def is_zero_matrix(a: SymMatrix, points: int = 20, tol: float = VERIFY_TOL,
                   seed: int = 0, table: SymbolTable | None = None) -> bool:
    if a.rows == 0 or a.cols == 0:
        return True
    envs = sample_envs(a.free_symbols(), points, seed, table, (a,))
    return all(np.max(np.abs(eval_matrix(a, env))) <= tol for env in envs)


# -- elimination core ------------------------------------------------------------

class _Elimination:
    """Gauss-Jordan elimination over Expr entries with numeric shadows.

    Row updates are division-free (cross-multiplication); pivot rows are
    scaled by a single division at the end.  Zero decisions for symbolic
    entries use shadow copies of the matrix evaluated at seeded random points
    and carried through the identical row operations.  Entries whose shadows
    vanish at every point are replaced by exact zero (probabilistic pruning,
    same soundness class as the sampled pivot tests; callers re-verify
    results by residual sampling at fresh points).
    """

    def __init__(self, rows: list[list[Expr]], pivot_cols: int, seed: int,
                 table: SymbolTable | None):
        self.rows = [list(r) for r in rows]
        self.m = len(self.rows)
        self.n = len(self.rows[0]) if self.m else 0
        self.pivot_cols = pivot_cols
        symbols: set[str] = set()
        for r in self.rows:
            for e in r:
                symbols |= free_symbols(e)
        probe = from_rows(rows) if self.m else zeros(0, 0)
        envs = sample_envs(symbols, SHADOW_ENVS, seed, table, (probe,)) \
            if self.m else []
        self.shadows = [eval_matrix(probe, env) for env in envs]
        self.pivots: list[tuple[int, int]] = []
        self._prune_all()

    def _shadow_zero(self, i: int, j: int) -> bool:
        for sh in self.shadows:
            scale_ref = 1.0 + np.max(np.abs(sh[i, :])) if sh.shape[1] else 1.0
            if abs(sh[i, j]) > SHADOW_TOL * scale_ref:
                return False
        return True

    def entry_is_zero(self, i: int, j: int) -> bool:
        e = self.rows[i][j]
        if is_const(e):
            # same threshold as the sampled zero test: tiny exact constants
            # (e.g. float rounding residue in the input) count as zero
            return e.value == 0 or abs(float(e.value)) <= ZERO_TOL
        return self._shadow_zero(i, j)

    def _prune_entry(self, i: int, j: int):
        e = self.rows[i][j]
        if is_const(e):
            if e.value != 0 and abs(float(e.value)) <= ZERO_TOL:
                self.rows[i][j] = ZERO
                for sh in self.shadows:
                    sh[i, j] = 0.0
        elif self._shadow_zero(i, j):
            self.rows[i][j] = ZERO
            for sh in self.shadows:
                sh[i, j] = 0.0

    def _prune_all(self):
        for i in range(self.m):
            for j in range(self.n):
                self._prune_entry(i, j)

    def _swap(self, a: int, b: int):
        if a != b:
            self.rows[a], self.rows[b] = self.rows[b], self.rows[a]
            for sh in self.shadows:
                sh[[a, b], :] = sh[[b, a], :]

    def run(self):
        r = 0
        for c in range(self.pivot_cols):
            if r >= self.m:
                break
            # structurally simplest candidate: constants first, then smallest
            # tree, ties by lowest row index
            best = None
            for i in range(r, self.m):
                if self.entry_is_zero(i, c):
                    continue
                e = self.rows[i][c]
                unit = is_const(e) and abs(e.value) == 1
                score = (0 if is_const(e) else 1, 0 if unit else 1,
                         node_count(e), i)
                if best is None or score < best[0]:
                    best = (score, i)
            if best is None:
                continue
            self._swap(r, best[1])
            p = self.rows[r][c]
            for i in range(self.m):
                if i == r or self.entry_is_zero(i, c):
                    continue
                q = self.rows[i][c]
                row_i, row_r = self.rows[i], self.rows[r]
                for j in range(self.n):
                    if j == c:
                        continue
                    a_rj = row_r[j]
                    if is_const(a_rj) and a_rj.value == 0:
                        if is_const(p) and p.value == 1:
                            continue
                        row_i[j] = mul_node(p, row_i[j])
                    else:
                        row_i[j] = add_node(mul_node(p, row_i[j]),
                                            neg_node(mul_node(q, a_rj)))
                row_i[c] = ZERO
                for k, sh in enumerate(self.shadows):
                    pv, qv = self._shadow_vals(k, r, i, c)
                    sh[i, :] = pv * sh[i, :] - qv * sh[r, :]
                    sh[i, c] = 0.0
                for j in range(self.n):
                    self._prune_entry(i, j)
            self.pivots.append((r, c))
            r += 1
        # single division per pivot row brings pivots to exact 1
        for (r, c) in self.pivots:
            p = self.rows[r][c]
            if is_const(p) and p.value == 1:
                continue
            row = self.rows[r]
            for j in range(self.n):
                if j == c:
                    continue
                if not (is_const(row[j]) and row[j].value == 0):
                    row[j] = div_node(row[j], p)
            row[c] = ONE
            for k, sh in enumerate(self.shadows):
                pv = sh[r, c]
                if pv != 0.0:
                    sh[r, :] = sh[r, :] / pv
                sh[r, c] = 1.0
        return self

    def _shadow_vals(self, k: int, r: int, i: int, c: int):
        sh = self.shadows[k]
        return sh[r, c], sh[i, c]


def rref(a: SymMatrix, seed: int = 0, table: SymbolTable | None = None,
         pivot_cols: int | None = None):
    """Reduced row echelon form; returns (SymMatrix, pivot column indices)."""
    if a.rows == 0 or a.cols == 0:
        return a, []
    elim = _Elimination(a.to_lists(),
                        a.cols if pivot_cols is None else pivot_cols,
                        seed, table).run()
    mat = from_rows(elim.rows)
    return mat, [c for (_, c) in elim.pivots]


def symbolic_nullspace(a: SymMatrix, trials: int = 20, seed: int = 0,
                       table: SymbolTable | None = None) -> SymMatrix:
    """Basis of the generic kernel: B with a @ B = 0 at sample points.

    Raises PivotAmbiguityError when elimination and independent rank sampling
    disagree on the rank (a sign of non-generic modulation).
    """
    if a.cols == 0:
        return zeros(0, 0)
    if a.rows == 0:
        return identity(a.cols)
    red, pivots = rref(a, seed=seed, table=table)
    r_sampled = generic_rank(a, trials=trials, seed=seed + 1, table=table)
    if len(pivots) != r_sampled:
        raise PivotAmbiguityError(
            f"elimination found rank {len(pivots)} but sampling found "
            f"{r_sampled}; modulation may be non-generic")
    free = [c for c in range(a.cols) if c not in pivots]
    cols = []
    for f in free:
        v = [ZERO] * a.cols
        v[f] = ONE
        for (i, c) in zip(range(len(pivots)), pivots):
            v[c] = neg_node(red.get(i, f))
        cols.append(v)
    basis = transpose(from_rows(cols)) if cols else zeros(a.cols, 0)
    _verify_nullspace(a, basis, seed + 2, table)
    return basis


def _verify_nullspace(a: SymMatrix, basis: SymMatrix, seed: int,
                      table: SymbolTable | None):
    if basis.cols == 0:
        return
    envs = sample_envs(a.free_symbols() | basis.free_symbols(), 20, seed,
                       table, (a, basis))
    for env in envs:
        am = eval_matrix(a, env)
        bm = eval_matrix(basis, env)
        resid = np.max(np.abs(am @ bm)) if am.size and bm.size else 0.0
        scale_ref = 1.0 + np.max(np.abs(am)) * np.max(np.abs(bm))
        if resid > VERIFY_TOL * scale_ref:
            raise SymMatrixError(
                f"nullspace residual {resid:.3e} exceeds tolerance at {env}")
        if numeric_rank(bm) != basis.cols:
            raise SymMatrixError(
                f"nullspace columns not independent at sample point {env}")


def symbolic_inverse(a: SymMatrix, trials: int = 20, seed: int = 0,
                     table: SymbolTable | None = None) -> SymMatrix:
    """Inverse with rational-expression entries; requires generic full rank."""
    if a.rows != a.cols:
        raise ShapeError(f"cannot invert non-square {a.rows}x{a.cols}")
    n = a.rows
    if n == 0:
        return a
    if generic_rank(a, trials=trials, seed=seed + 1, table=table) < n:
        raise SingularMatrixError(
            f"matrix is generically singular ({a.rows}x{a.cols})")
    aug = hcat([a, identity(n)])
    red, pivots = rref(aug, seed=seed, table=table, pivot_cols=n)
    if len(pivots) < n:
        raise PivotAmbiguityError(
            f"elimination found rank {len(pivots)} < {n} although sampling "
            "found full rank")
    inv = take_cols(red, range(n, 2 * n))
    _verify_inverse(a, inv, seed + 2, table)
    return inv


def _verify_inverse(a: SymMatrix, inv: SymMatrix, seed: int,
                    table: SymbolTable | None):
    n = a.rows
    envs = sample_envs(a.free_symbols() | inv.free_symbols(), 20, seed,
                       table, (a, inv))
    eye = np.eye(n)
    for env in envs:
        am = eval_matrix(a, env)
        xm = eval_matrix(inv, env)
        scale_ref = 1.0 + np.max(np.abs(am)) * np.max(np.abs(xm))
        if (np.max(np.abs(am @ xm - eye)) > VERIFY_TOL * scale_ref
                or np.max(np.abs(xm @ am - eye)) > VERIFY_TOL * scale_ref):
            raise SymMatrixError(
                f"inverse residual exceeds tolerance at sample point {env}")
