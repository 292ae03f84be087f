# FILE: src/grid.py

from dataclasses import dataclass
from math import factorial
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sps
import sympy

PERIODIC = 'periodic'
BOUNDED = 'bounded'
COMPOSED = 'composed'
DIRECT = 'direct'


class GridResolutionError(ValueError):
    """Grid too coarse for the requested stencil"""


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [a, b]; periodic grids omit the right end point"""

    a: float
    b: float
    N: int
    bc: str = BOUNDED

    def __post_init__(self):
        if self.bc not in (PERIODIC, BOUNDED):
            raise ValueError(f"Unknown boundary kind '{self.bc}' (expected periodic or bounded)")
        if not self.b > self.a:
            raise ValueError(f"Empty interval [{self.a}, {self.b}]")
        if self.N < 4:
            raise GridResolutionError(f"Grid needs at least 4 points, got {self.N}")

    @property
    def periodic(self) -> bool:
        return self.bc == PERIODIC

    @property
    def h(self) -> float:
        if self.periodic:
            return (self.b - self.a) / self.N
        return (self.b - self.a) / (self.N - 1)

    @property
    def points(self) -> np.ndarray:
        return self.a + self.h * np.arange(self.N)

    def weights(self) -> np.ndarray:
        """Trapezoidal weights (bounded) or rectangle weights (periodic)"""
        w = np.full(self.N, self.h)
        if not self.periodic:
            w[0] *= 0.5
            w[-1] *= 0.5
        return w

    def integrate(self, values: np.ndarray) -> float:
        return float(np.asarray(values) @ self.weights())

    def require_resolution(self, stencil_order: int):
        if self.N < 4 * max(stencil_order, 1):
            raise GridResolutionError(
                f"N = {self.N} is too coarse for a derivative stencil of order {stencil_order}; "
                f"need N >= {4 * max(stencil_order, 1)}"
            )

    def with_size(self, N: int) -> 'Grid':
        return Grid(self.a, self.b, N, self.bc)


def fd_weights(offsets: Sequence[float], order: int) -> np.ndarray:
    """
    Finite-difference weights for the `order`-th derivative at offset 0

    Args:
        offsets: node positions in units of h
        order: derivative order

    Returns:
        weights w with sum_j w_j f(o_j h) ~ h^order f^(order)(0)
    """
    offsets = np.asarray(offsets, dtype=float)
    q = len(offsets)
    if q <= order:
        raise GridResolutionError(f"{q} nodes cannot resolve a derivative of order {order}")
    # moment conditions sum_j w_j o_j^p / p! = delta_{p, order}
    vander = np.array([offsets ** p / factorial(p) for p in range(q)])
    rhs = np.zeros(q)
    rhs[order] = 1.0
    return np.linalg.solve(vander, rhs)


def _centered_halfwidth(order: int, accuracy: int) -> int:
    return (order + 1) // 2 + (accuracy - 2) // 2


class StencilSet:
    """Discrete d/dz^k operators on one grid, built lazily and cached"""

    def __init__(self, grid: Grid, accuracy: int = 2, mode: Optional[str] = None):
        if accuracy not in (2, 4):
            raise ValueError(f"Stencil accuracy must be 2 or 4, got {accuracy}")
        if not grid.periodic and accuracy != 2:
            raise ValueError("Bounded grids use order-2 stencils")
        self.grid = grid
        self.accuracy = accuracy
        self.mode = mode or (COMPOSED if grid.periodic else DIRECT)
        if self.mode not in (COMPOSED, DIRECT):
            raise ValueError(f"Unknown derivative mode '{self.mode}'")
        self._cache: Dict[int, sps.csr_matrix] = {}

    def derivative(self, k: int) -> sps.csr_matrix:
        if k in self._cache:
            return self._cache[k]
        N = self.grid.N
        if k == 0:
            op = sps.identity(N, format='csr')
        elif self.mode == COMPOSED and k > 1:
            op = (self.derivative(1) @ self.derivative(k - 1)).tocsr()
        else:
            self.grid.require_resolution(k)
            op = self._periodic_stencil(k) if self.grid.periodic else self._bounded_stencil(k)
        self._cache[k] = op
        return op

    def apply(self, k: int, values: np.ndarray) -> np.ndarray:
        return self.derivative(k) @ values

    def _periodic_stencil(self, k: int) -> sps.csr_matrix:
        N, h = self.grid.N, self.grid.h
        p = _centered_halfwidth(k, self.accuracy)
        offsets = np.arange(-p, p + 1)
        w = fd_weights(offsets, k) / h ** k
        rows, cols, vals = [], [], []
        for i in range(N):
            for o, c in zip(offsets, w):
                if c != 0.0:
                    rows.append(i)
                    cols.append((i + o) % N)
                    vals.append(c)
        return sps.csr_matrix((vals, (rows, cols)), shape=(N, N))

    def _bounded_stencil(self, k: int) -> sps.csr_matrix:
        N, h = self.grid.N, self.grid.h
        p = _centered_halfwidth(k, 2)
        q = k + 2
        centered = fd_weights(np.arange(-p, p + 1), k) / h ** k
        rows, cols, vals = [], [], []
        for i in range(N):
            if p <= i <= N - 1 - p:
                idx = np.arange(i - p, i + p + 1)
                w = centered
            elif i < p:
                idx = np.arange(q)
                w = fd_weights(idx - i, k) / h ** k
            else:
                idx = np.arange(N - q, N)
                w = fd_weights(idx - i, k) / h ** k
            rows.extend([i] * len(idx))
            cols.extend(idx.tolist())
            vals.extend(w.tolist())
        return sps.csr_matrix((vals, (rows, cols)), shape=(N, N))

    def _one_sided(self, k: int, q: int, node: int) -> np.ndarray:
        return fd_weights(np.arange(q) - node, k) / self.grid.h ** k

    def trace_weights(self, k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        One-sided order-2 stencils for the k-th derivative at z = a and z = b

        Returns:
            (indices_a, weights_a, indices_b, weights_b)
        """
        N = self.grid.N
        if self.grid.periodic:
            # both ends are node 0; use the interior operator row
            row = self.derivative(k).getrow(0)
            return row.indices, row.data, row.indices, row.data
        if k == 0:
            return np.array([0]), np.array([1.0]), np.array([N - 1]), np.array([1.0])
        q = k + 2
        if q > N:
            raise GridResolutionError(f"N = {N} cannot hold a one-sided stencil of {q} points")
        idx_a = np.arange(q)
        idx_b = np.arange(N - q, N)
        return (idx_a, self._one_sided(k, q, 0),
                idx_b, fd_weights(idx_b - (N - 1), k) / self.grid.h ** k)


class SampledField:
    """
    Samples of a vector field and its z-derivatives on a grid

    jets[i, j, :] holds d^j x_{i+1} / dz^j at the grid points.
    """

    def __init__(self, grid: Grid, jets: np.ndarray):
        jets = np.asarray(jets, dtype=float)
        if jets.ndim != 3 or jets.shape[2] != grid.N:
            raise ValueError(f"Jet array must have shape (n, K+1, {grid.N}), got {jets.shape}")
        self.grid = grid
        self.jets = jets

    @property
    def n(self) -> int:
        return self.jets.shape[0]

    @property
    def max_order(self) -> int:
        return self.jets.shape[1] - 1

    @property
    def values(self) -> np.ndarray:
        return self.jets[:, 0, :]

    def jet(self, state_index: int, order: int) -> np.ndarray:
        if not 1 <= state_index <= self.n:
            raise IndexError(f"State index {state_index} outside [1:{self.n}]")
        if order > self.max_order:
            raise GridResolutionError(
                f"Derivative of order {order} requested, field only carries order {self.max_order}"
            )
        return self.jets[state_index - 1, order]

    def __add__(self, other: 'SampledField') -> 'SampledField':
        k = min(self.max_order, other.max_order)
        return SampledField(self.grid, self.jets[:, :k + 1] + other.jets[:, :k + 1])

    def __mul__(self, scalar: float) -> 'SampledField':
        return SampledField(self.grid, self.jets * scalar)

    __rmul__ = __mul__

    @classmethod
    def from_sympy(cls, exprs: Sequence[Union[str, sympy.Expr]], grid: Grid,
                   max_order: int) -> 'SampledField':
        """Exact derivative samples of closed-form fields x_i(z)"""
        z = sympy.Symbol('z')
        jets = np.zeros((len(exprs), max_order + 1, grid.N))
        pts = grid.points
        for i, expr in enumerate(exprs):
            e = sympy.sympify(expr, locals={'z': z})
            for j in range(max_order + 1):
                f = sympy.lambdify(z, e, modules='numpy')
                jets[i, j] = np.broadcast_to(np.asarray(f(pts), dtype=float), (grid.N,))
                e = sympy.diff(e, z)
        return cls(grid, jets)

    @classmethod
    def from_values(cls, values: np.ndarray, stencils: StencilSet, max_order: int) -> 'SampledField':
        """Derivative samples from the discrete stencils"""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        grid = stencils.grid
        jets = np.zeros((values.shape[0], max_order + 1, grid.N))
        for j in range(max_order + 1):
            D = stencils.derivative(j)
            for i in range(values.shape[0]):
                jets[i, j] = D @ values[i]
        return cls(grid, jets)


def evaluate_sympy(expr: Union[str, sympy.Expr], z_values) -> np.ndarray:
    z = sympy.Symbol('z')
    e = sympy.sympify(expr, locals={'z': z})
    f = sympy.lambdify(z, e, modules='numpy')
    z_values = np.asarray(z_values, dtype=float)
    return np.broadcast_to(np.asarray(f(z_values), dtype=float), z_values.shape).copy()
