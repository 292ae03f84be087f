# FILE: src/opalg.py

from enum import Enum
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.expr_parser import format_operator_entry, parse_matrix, parse_operator_entry
from src.jetexpr import JetExprError, JetPolynomial, Monomial, as_fraction, total_derivative_n


class DimensionError(ValueError):
    """Operator / vector shapes do not fit together"""


class SymmetryError(ValueError):
    """Operator lacks the symmetry an operation requires"""


class SymmetryClass(str, Enum):
    SKEW_ADJOINT = 'skew_adjoint'
    SELF_ADJOINT = 'self_adjoint'
    NEITHER = 'neither'


Matrix = Tuple[Tuple[Fraction, ...], ...]


def _zeros(rows: int, cols: int) -> Matrix:
    return tuple(tuple(Fraction(0) for _ in range(cols)) for _ in range(rows))


def _is_zero(m: Matrix) -> bool:
    return not any(c for row in m for c in row)


def _matmul(a: Matrix, b: Matrix) -> Matrix:
    rows, inner, cols = len(a), len(b), len(b[0]) if b else 0
    out = [[Fraction(0)] * cols for _ in range(rows)]
    for i in range(rows):
        for k in range(inner):
            aik = a[i][k]
            if not aik:
                continue
            bk = b[k]
            oi = out[i]
            for j in range(cols):
                if bk[j]:
                    oi[j] += aik * bk[j]
    return tuple(tuple(r) for r in out)


def _add(a: Matrix, b: Matrix) -> Matrix:
    return tuple(tuple(x + y for x, y in zip(ra, rb)) for ra, rb in zip(a, b))


def _scale(a: Matrix, c: Fraction) -> Matrix:
    return tuple(tuple(c * x for x in row) for row in a)


def _transpose(a: Matrix, rows: int, cols: int) -> Matrix:
    return tuple(tuple(a[i][j] for i in range(rows)) for j in range(cols))


class MatDiffOp:
    """
    Constant-coefficient matrix differential operator sum_k A_k dz^k

    Coefficient matrices are dense exact rationals; all-zero A_k are not stored.
    """

    __slots__ = ('rows', 'cols', '_coeffs')

    def __init__(self, rows: int, cols: int, coeffs: Optional[Mapping[int, Sequence[Sequence]]] = None):
        if rows < 0 or cols < 0:
            raise DimensionError(f"Negative operator shape {rows}x{cols}")
        self.rows = rows
        self.cols = cols
        clean: Dict[int, Matrix] = {}
        for k, mat in (coeffs or {}).items():
            if not isinstance(k, int) or k < 0:
                raise DimensionError(f"Derivative order must be a non-negative integer, got {k!r}")
            if len(mat) != rows or any(len(r) != cols for r in mat):
                raise DimensionError(f"Coefficient A_{k} is not {rows}x{cols}")
            m = tuple(tuple(as_fraction(c) for c in r) for r in mat)
            if not _is_zero(m):
                clean[k] = m
        self._coeffs = clean

    # construction

    @classmethod
    def zero(cls, rows: int, cols: int) -> 'MatDiffOp':
        return cls(rows, cols)

    @classmethod
    def identity(cls, n: int) -> 'MatDiffOp':
        return cls(n, n, {0: [[int(i == j) for j in range(n)] for i in range(n)]})

    @classmethod
    def dz(cls, k: int = 1, sign: int = 1) -> 'MatDiffOp':
        """Scalar (sign*dz)^k"""
        return cls(1, 1, {k: [[sign ** k]]})

    @classmethod
    def diagonal(cls, orders: Sequence[int], sign: int = 1) -> 'MatDiffOp':
        """diag((sign*dz)^{j_1}, ..., (sign*dz)^{j_l})"""
        n = len(orders)
        coeffs: Dict[int, List[List[int]]] = {}
        for i, j in enumerate(orders):
            mat = coeffs.setdefault(j, [[0] * n for _ in range(n)])
            mat[i][i] = sign ** j
        return cls(n, n, coeffs)

    @classmethod
    def from_entries(cls, entries: Sequence[Sequence[JetPolynomial]]) -> 'MatDiffOp':
        """Build from a matrix of polynomials whose z slot stands for dz"""
        rows = len(entries)
        cols = len(entries[0]) if rows else 0
        coeffs: Dict[int, List[List[Fraction]]] = {}
        for i, row in enumerate(entries):
            if len(row) != cols:
                raise DimensionError("Ragged operator matrix")
            for j, poly in enumerate(row):
                if poly.variables():
                    raise JetExprError(f"Operator entry '{poly}' must be a polynomial in d with constant coefficients")
                for mono, c in poly.items():
                    mat = coeffs.setdefault(mono.z_power, [[Fraction(0)] * cols for _ in range(rows)])
                    mat[i][j] += c
        return cls(rows, cols, coeffs)

    @classmethod
    def from_text(cls, text: str, params: Optional[Mapping[str, Fraction]] = None) -> 'MatDiffOp':
        """Parse `[[0, d], [d, 0]]` style operator text"""
        entries = parse_matrix(text, lambda s: parse_operator_entry(s, params))
        return cls.from_entries(entries)

    @classmethod
    def block(cls, blocks: Sequence[Sequence['MatDiffOp']]) -> 'MatDiffOp':
        """Assemble a block operator; blocks in one row share `rows`, in one column share `cols`"""
        row_sizes = [r[0].rows for r in blocks]
        col_sizes = [b.cols for b in blocks[0]]
        for r, row in enumerate(blocks):
            if len(row) != len(col_sizes):
                raise DimensionError("Ragged block operator")
            for c, b in enumerate(row):
                if b.rows != row_sizes[r] or b.cols != col_sizes[c]:
                    raise DimensionError(f"Block ({r},{c}) is {b.rows}x{b.cols}, "
                                         f"expected {row_sizes[r]}x{col_sizes[c]}")
        R, C = sum(row_sizes), sum(col_sizes)
        orders = sorted({k for row in blocks for b in row for k in b._coeffs})
        coeffs = {}
        for k in orders:
            mat = [[Fraction(0)] * C for _ in range(R)]
            r0 = 0
            for r, row in enumerate(blocks):
                c0 = 0
                for c, b in enumerate(row):
                    bk = b._coeffs.get(k)
                    if bk is not None:
                        for i in range(b.rows):
                            for j in range(b.cols):
                                mat[r0 + i][c0 + j] = bk[i][j]
                    c0 += col_sizes[c]
                r0 += row_sizes[r]
            coeffs[k] = mat
        return cls(R, C, coeffs)

    # structure

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows, self.cols

    @property
    def order(self) -> int:
        return max(self._coeffs, default=0)

    @property
    def coeffs(self) -> Dict[int, Matrix]:
        return dict(self._coeffs)

    def coefficient(self, k: int) -> Matrix:
        return self._coeffs.get(k, _zeros(self.rows, self.cols))

    def is_zero(self) -> bool:
        return not self._coeffs

    def is_square(self) -> bool:
        return self.rows == self.cols

    def entry(self, i: int, j: int) -> JetPolynomial:
        """0-based entry (i, j) as a polynomial in the z slot"""
        return JetPolynomial({Monomial(k): m[i][j] for k, m in self._coeffs.items()})

    def select(self, row_indices: Sequence[int], col_indices: Sequence[int]) -> 'MatDiffOp':
        """Sub-operator with the given 0-based rows and columns (repeats allowed)"""
        return MatDiffOp(len(row_indices), len(col_indices), {
            k: [[m[i][j] for j in col_indices] for i in row_indices] for k, m in self._coeffs.items()
        })

    def transpose(self) -> 'MatDiffOp':
        return MatDiffOp(self.cols, self.rows,
                         {k: _transpose(m, self.rows, self.cols) for k, m in self._coeffs.items()})

    # arithmetic

    def _check_same_shape(self, other: 'MatDiffOp'):
        if self.shape != other.shape:
            raise DimensionError(f"Shapes {self.shape} and {other.shape} differ")

    def __add__(self, other: 'MatDiffOp') -> 'MatDiffOp':
        self._check_same_shape(other)
        out = dict(self._coeffs)
        for k, m in other._coeffs.items():
            out[k] = _add(out[k], m) if k in out else m
        return MatDiffOp(self.rows, self.cols, out)

    def __neg__(self) -> 'MatDiffOp':
        return MatDiffOp(self.rows, self.cols, {k: _scale(m, Fraction(-1)) for k, m in self._coeffs.items()})

    def __sub__(self, other: 'MatDiffOp') -> 'MatDiffOp':
        return self + (-other)

    def scaled(self, c) -> 'MatDiffOp':
        c = as_fraction(c)
        return MatDiffOp(self.rows, self.cols, {k: _scale(m, c) for k, m in self._coeffs.items()})

    def __matmul__(self, other: 'MatDiffOp') -> 'MatDiffOp':
        return compose(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MatDiffOp):
            return NotImplemented
        return self.shape == other.shape and self._coeffs == other._coeffs

    def __hash__(self):
        return hash((self.rows, self.cols, frozenset(self._coeffs.items())))

    # export

    def to_numpy(self, k: int) -> np.ndarray:
        return np.array([[float(c) for c in row] for row in self.coefficient(k)], dtype=float).reshape(self.rows, self.cols)

    def to_text(self, symbol: str = 'd') -> str:
        rows = []
        for i in range(self.rows):
            rows.append('[' + ', '.join(format_operator_entry(self.entry(i, j), symbol) for j in range(self.cols)) + ']')
        return '[' + ', '.join(rows) + ']'

    def to_json(self) -> Dict[str, List[List[str]]]:
        """Coefficient matrices as rational strings keyed by derivative order"""
        return {str(k): [[str(c) for c in row] for row in self._coeffs[k]] for k in sorted(self._coeffs)}

    def __str__(self):
        return self.to_text()

    def __repr__(self):
        return f"MatDiffOp({self.rows}x{self.cols}, '{self.to_text()}')"


def apply(A: MatDiffOp, e: Sequence[JetPolynomial]) -> Tuple[JetPolynomial, ...]:
    """Component i = sum_k sum_j (A_k)_{ij} D_z^k e_j"""
    if len(e) != A.cols:
        raise DimensionError(f"Operator has {A.cols} columns but the vector has {len(e)} entries")
    derivs: Dict[Tuple[int, int], JetPolynomial] = {}
    for k in A.coeffs:
        for j in range(A.cols):
            derivs[(k, j)] = total_derivative_n(e[j], k)
    out = []
    for i in range(A.rows):
        acc = JetPolynomial()
        for k, m in A.coeffs.items():
            for j in range(A.cols):
                if m[i][j]:
                    acc = acc + derivs[(k, j)] * m[i][j]
        out.append(acc)
    return tuple(out)


def compose(A: MatDiffOp, B: MatDiffOp) -> MatDiffOp:
    """Cauchy product C_k = sum_{p+q=k} A_p B_q"""
    if A.cols != B.rows:
        raise DimensionError(f"Cannot compose {A.rows}x{A.cols} with {B.rows}x{B.cols}")
    out: Dict[int, Matrix] = {}
    for p, ap in A.coeffs.items():
        for q, bq in B.coeffs.items():
            prod = _matmul(ap, bq)
            out[p + q] = _add(out[p + q], prod) if p + q in out else prod
    return MatDiffOp(A.rows, B.cols, out)


def formal_adjoint(A: MatDiffOp) -> MatDiffOp:
    """(A*)_k = (-1)^k A_k^T"""
    return MatDiffOp(A.cols, A.rows, {
        k: _scale(_transpose(m, A.rows, A.cols), Fraction((-1) ** k)) for k, m in A.coeffs.items()
    })


def classify_symmetry(A: MatDiffOp) -> SymmetryClass:
    """
    skew_adjoint iff A_k = (-1)^{k+1} A_k^T for all k,
    self_adjoint iff A_k = (-1)^k A_k^T for all k.
    The zero operator is reported as skew_adjoint.
    """
    if not A.is_square():
        raise DimensionError(f"Symmetry is only defined for square operators, got {A.rows}x{A.cols}")
    adj = formal_adjoint(A)
    if adj == -A:
        return SymmetryClass.SKEW_ADJOINT
    if adj == A:
        return SymmetryClass.SELF_ADJOINT
    return SymmetryClass.NEITHER


def require_skew(A: MatDiffOp, what: str = 'operator'):
    if not A.is_square():
        raise SymmetryError(f"The {what} must be square, got {A.rows}x{A.cols}")
    if classify_symmetry(A) != SymmetryClass.SKEW_ADJOINT:
        raise SymmetryError(f"The {what} {A.to_text()} is not formally skew-adjoint")
