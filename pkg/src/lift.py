# FILE: src/lift.py

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.expr_parser import parse_expression, parse_matrix
from src.jetexpr import (DensityProfile, JetPolynomial, JetVar,
                         variational_gradient)
from src.opalg import (DimensionError, MatDiffOp, Matrix, SymmetryError, apply, compose,
                       formal_adjoint, require_skew)


class LiftError(ValueError):
    """The requested lift is inconsistent with the system"""


@dataclass(frozen=True)
class ResistiveMap:
    """Symmetric-part-nonnegative matrix R(z) closing the dissipative ports, phi = R F"""

    entries: Tuple[Tuple[JetPolynomial, ...], ...]

    def __post_init__(self):
        d = len(self.entries)
        if any(len(row) != d for row in self.entries):
            raise DimensionError("Resistive map must be square")
        for row in self.entries:
            for p in row:
                if p.variables():
                    raise LiftError(f"Resistive map entry '{p}' may only depend on z")

    @classmethod
    def scalar(cls, value) -> 'ResistiveMap':
        poly = value if isinstance(value, JetPolynomial) else JetPolynomial.constant(value)
        return cls(((poly,),))

    @classmethod
    def from_text(cls, text: str, params: Optional[Mapping[str, Fraction]] = None) -> 'ResistiveMap':
        rows = parse_matrix(text, lambda s: parse_expression(s, state_names=(), params=params))
        return cls(tuple(tuple(r) for r in rows))

    @property
    def size(self) -> int:
        return len(self.entries)

    def is_constant(self) -> bool:
        return all(p.is_constant() for row in self.entries for p in row)

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        """Samples R(z_q), shape (len(z), d, d)"""
        z = np.asarray(z, dtype=float)
        out = np.zeros((z.size, self.size, self.size))
        for i, row in enumerate(self.entries):
            for j, p in enumerate(row):
                out[:, i, j] = p.evaluate(lambda v: 0.0, z)
        return out

    def min_eigenvalue(self, z: np.ndarray) -> float:
        """Smallest eigenvalue of the symmetric part over the samples"""
        samples = self.evaluate(z)
        sym = 0.5 * (samples + np.transpose(samples, (0, 2, 1)))
        return float(np.min(np.linalg.eigvalsh(sym)))

    def to_text(self) -> str:
        if self.size == 1:
            return self.entries[0][0].to_text(state_names=())
        return '[' + ', '.join('[' + ', '.join(p.to_text(state_names=()) for p in row) + ']'
                               for row in self.entries) + ']'

    def apply(self, F: Sequence[JetPolynomial]) -> Tuple[JetPolynomial, ...]:
        if len(F) != self.size:
            raise DimensionError(f"Resistive map is {self.size}x{self.size}, vector has {len(F)} entries")
        return tuple(sum((p * f for p, f in zip(row, F)), JetPolynomial()) for row in self.entries)


@dataclass(frozen=True)
class HamiltonianSystem:
    """
    x_t = (J - G R G*) dH/dx on [a, b]

    G and R are absent for conservative systems. G is n x d_g.
    """

    J: MatDiffOp
    density: DensityProfile
    G: Optional[MatDiffOp] = None
    R: Optional[ResistiveMap] = None
    name: str = 'system'
    state_names: Tuple[str, ...] = ()
    domain: Tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not self.J.is_square():
            raise DimensionError(f"Structure operator must be square, got {self.J.rows}x{self.J.cols}")
        object.__setattr__(self, 'density', DensityProfile.of(self.density))
        if self.density.state_count() > self.n:
            raise DimensionError(f"Density references state {self.density.state_count()} "
                                 f"but the system has {self.n} states")
        if (self.G is None) != (self.R is None):
            raise LiftError("Dissipation needs both G and R")
        if self.G is not None:
            if self.G.rows != self.n:
                raise DimensionError(f"G must have {self.n} rows, got {self.G.rows}")
            if self.R.size != self.G.cols:
                raise DimensionError(f"R must be {self.G.cols}x{self.G.cols}, got {self.R.size}x{self.R.size}")
        if not self.state_names:
            object.__setattr__(self, 'state_names', tuple(f"x{i}" for i in range(1, self.n + 1)))
        elif len(self.state_names) != self.n:
            raise DimensionError(f"{len(self.state_names)} state names for {self.n} states")

    @property
    def n(self) -> int:
        return self.J.rows

    @property
    def is_dissipative(self) -> bool:
        return self.G is not None

    @property
    def d_g(self) -> int:
        return self.G.cols if self.G is not None else 0

    def gradient(self) -> Tuple[JetPolynomial, ...]:
        return variational_gradient(self.density, self.n)

    def dynamics(self) -> Tuple[JetPolynomial, ...]:
        """Symbolic right-hand side (J - G R G*) dH/dx on the jet algebra"""
        e = self.gradient()
        rhs = apply(self.J, e)
        if self.is_dissipative:
            F = apply(formal_adjoint(self.G), e)
            drain = apply(self.G, self.R.apply(F))
            rhs = tuple(a - b for a, b in zip(rhs, drain))
        return rhs

    def without_dissipation(self) -> 'HamiltonianSystem':
        return HamiltonianSystem(self.J, self.density, None, None, self.name, self.state_names, self.domain)


@dataclass(frozen=True)
class LiftSpec:
    """
    Ordered index set of jet coordinates (i, j) used as lifted states

    Entries are kept sorted first by derivative order, then by state index.
    """

    entries: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        entries = tuple((int(i), int(j)) for i, j in self.entries)
        if len(set(entries)) != len(entries):
            raise LiftError(f"Lift entries must be pairwise distinct: {entries}")
        for i, j in entries:
            if i < 1 or j < 0:
                raise LiftError(f"Invalid lift entry ({i}, {j})")
        object.__setattr__(self, 'entries', tuple(sorted(entries, key=lambda e: (e[1], e[0]))))

    @property
    def l(self) -> int:
        return len(self.entries)

    @property
    def orders(self) -> Tuple[int, ...]:
        return tuple(j for _, j in self.entries)

    @property
    def states(self) -> Tuple[int, ...]:
        return tuple(i for i, _ in self.entries)

    @property
    def max_order(self) -> int:
        return max(self.orders, default=0)

    def jet_vars(self) -> Tuple[JetVar, ...]:
        return tuple(JetVar(i, j) for i, j in self.entries)

    def index_of(self, v: JetVar) -> int:
        """1-based lifted index of a jet variable"""
        try:
            return self.entries.index((v.state_index, v.deriv_order)) + 1
        except ValueError:
            raise LiftError(f"Jet variable {v} is not part of the lift") from None

    def is_identity(self) -> bool:
        return all(j == 0 for j in self.orders)

    def D_plus(self) -> MatDiffOp:
        return MatDiffOp.diagonal(self.orders, sign=1)

    def D_minus(self) -> MatDiffOp:
        return MatDiffOp.diagonal(self.orders, sign=-1)

    def lifted_names(self, state_names: Sequence[str]) -> Tuple[str, ...]:
        return tuple(state_names[i - 1] + ('_' + 'z' * j if j else '') for i, j in self.entries)

    def restrict(self, density: DensityProfile) -> Callable[[JetVar], JetVar]:
        """Renaming d^{j_k}x_{i_k} -> xbar_k"""
        missing = [v for v in density.support if (v.state_index, v.deriv_order) not in self.entries]
        if missing:
            raise LiftError("Lift does not cover density variables: " + ', '.join(str(v) for v in missing))
        return lambda v: JetVar(self.index_of(v), 0)

    def prolong(self) -> Callable[[JetVar], JetVar]:
        """Renaming d^j xbar_k -> d^{j + j_k} x_{i_k}"""
        def fn(v: JetVar) -> JetVar:
            i, j = self.entries[v.state_index - 1]
            return JetVar(i, j + v.deriv_order)
        return fn

    def to_json(self) -> List[List[int]]:
        return [[i, j] for i, j in self.entries]


def infer_lift_spec(d: DensityProfile, n: int) -> LiftSpec:
    """Support of the density plus every zero-order coordinate"""
    d = DensityProfile.of(d)
    if d.state_count() > n:
        raise LiftError(f"Density references state {d.state_count()} but n = {n}")
    entries = {(v.state_index, v.deriv_order) for v in d.support}
    entries.update((i, 0) for i in range(1, n + 1))
    return LiftSpec(tuple(entries))


@dataclass(frozen=True)
class LiftedSystem:
    Jbar: MatDiffOp
    density_bar: DensityProfile
    D_plus: MatDiffOp
    D_minus: MatDiffOp
    spec: LiftSpec
    provenance: HamiltonianSystem

    def __post_init__(self):
        if self.density_bar.max_order != 0:
            raise LiftError("Lifted density still depends on derivatives")

    @property
    def l(self) -> int:
        return self.spec.l

    def as_system(self) -> HamiltonianSystem:
        src = self.provenance
        return HamiltonianSystem(self.Jbar, self.density_bar, name=f"{src.name}_lifted",
                                 state_names=self.spec.lifted_names(src.state_names), domain=src.domain)


@dataclass(frozen=True)
class DissipativeLift:
    Jbar: MatDiffOp
    Gbar: MatDiffOp
    R: ResistiveMap
    composite: MatDiffOp
    lifted: LiftedSystem

    @property
    def m_hat(self) -> int:
        return self.composite.order

    def as_system(self) -> HamiltonianSystem:
        base = self.lifted.as_system()
        return HamiltonianSystem(self.Jbar, self.lifted.density_bar, self.Gbar, self.R, base.name,
                                 base.state_names, base.domain)


def _check_preconditions(system: HamiltonianSystem, spec: LiftSpec):
    try:
        require_skew(system.J, 'structure operator')
    except SymmetryError as e:
        raise LiftError(str(e)) from e
    bad = [e for e in spec.entries if e[0] > system.n]
    if bad:
        raise LiftError(f"Lift entries {bad} reference states beyond n = {system.n}")


def lift_hamiltonian(system: HamiltonianSystem, spec: Optional[LiftSpec] = None) -> LiftedSystem:
    """
    Jbar = D+ o J_sub o D-, with (J_sub)_{kk'} = J_{i_k i_k'}, and the density
    rewritten in the lifted coordinates.
    """
    spec = spec or infer_lift_spec(system.density, system.n)
    _check_preconditions(system, spec)
    rename = spec.restrict(system.density)
    idx = [i - 1 for i in spec.states]
    J_sub = system.J.select(idx, idx)
    D_plus, D_minus = spec.D_plus(), spec.D_minus()
    Jbar = compose(compose(D_plus, J_sub), D_minus)
    density_bar = DensityProfile.of(system.density.density.rename(rename))
    return LiftedSystem(Jbar, density_bar, D_plus, D_minus, spec, system)


def _accumulate(target: Dict[int, List[List[Fraction]]], k: int, rows: int, cols: int,
                r: int, c: int, value: Fraction):
    mat = target.setdefault(k, [[Fraction(0)] * cols for _ in range(rows)])
    mat[r][c] += value


def coefficients_closed_form(system: HamiltonianSystem, spec: LiftSpec,
                             sign_convention: str = 'column') -> Dict[int, Matrix]:
    """
    J_k of the lifted operator from the coefficients P_u of J:
    entry (k, k') of J_{u + j_k + j_k'} collects (-1)^{j_k'} (P_u)_{i_k i_k'}.

    sign_convention='row' uses (-1)^{j_k} instead; that variant does not
    reproduce the composed operator and is kept for regression checks.
    """
    if sign_convention not in ('column', 'row'):
        raise ValueError(f"Unknown sign convention '{sign_convention}'")
    _check_preconditions(system, spec)
    l = spec.l
    out: Dict[int, List[List[Fraction]]] = {}
    for u, P in system.J.coeffs.items():
        for a, (ia, ja) in enumerate(spec.entries):
            for b, (ib, jb) in enumerate(spec.entries):
                p = P[ia - 1][ib - 1]
                if not p:
                    continue
                sign = (-1) ** (jb if sign_convention == 'column' else ja)
                _accumulate(out, u + ja + jb, l, l, a, b, sign * p)
    return MatDiffOp(l, l, out).coeffs


def lift_dissipative(system: HamiltonianSystem, spec: Optional[LiftSpec] = None) -> DissipativeLift:
    """Gbar = D+ o G_sub (rows i_1..i_l of G) and the skew composite [[Jbar, Gbar], [-Gbar*, 0]]"""
    if not system.is_dissipative:
        raise LiftError(f"System '{system.name}' has no dissipation")
    spec = spec or infer_lift_spec(system.density, system.n)
    lifted = lift_hamiltonian(system, spec)
    G_sub = system.G.select([i - 1 for i in spec.states], list(range(system.d_g)))
    Gbar = compose(lifted.D_plus, G_sub)
    composite = MatDiffOp.block([
        [lifted.Jbar, Gbar],
        [-formal_adjoint(Gbar), MatDiffOp.zero(system.d_g, system.d_g)],
    ])
    require_skew(composite, 'composite operator')
    return DissipativeLift(lifted.Jbar, Gbar, system.R, composite, lifted)


def g_coefficients_closed_form(system: HamiltonianSystem, spec: LiftSpec) -> Dict[int, Matrix]:
    """H_{u + j_k} row k collects row i_k of G_u"""
    if not system.is_dissipative:
        raise LiftError(f"System '{system.name}' has no dissipation")
    _check_preconditions(system, spec)
    l, d_g = spec.l, system.d_g
    out: Dict[int, List[List[Fraction]]] = {}
    for u, Gu in system.G.coeffs.items():
        for a, (ia, ja) in enumerate(spec.entries):
            for c in range(d_g):
                if Gu[ia - 1][c]:
                    _accumulate(out, u + ja, l, d_g, a, c, Gu[ia - 1][c])
    return MatDiffOp(l, d_g, out).coeffs


def composite_operator(dl: DissipativeLift) -> MatDiffOp:
    """
    sum_k B_k dz^k with B_k = [[J_k, H_k], [(-1)^{k+1} H_k^T, 0]] from the
    closed-form coefficients, up to order max(m + 2 j_l, m_g + j_l).
    """
    system = dl.lifted.provenance
    spec = dl.lifted.spec
    Jk = coefficients_closed_form(system, spec)
    Hk = g_coefficients_closed_form(system, spec)
    l, d_g = spec.l, dl.Gbar.cols
    size = l + d_g
    blocks: Dict[int, List[List[Fraction]]] = {}
    for k in set(Jk) | set(Hk):
        mat = [[Fraction(0)] * size for _ in range(size)]
        if k in Jk:
            for a in range(l):
                for b in range(l):
                    mat[a][b] = Jk[k][a][b]
        if k in Hk:
            sign = (-1) ** (k + 1)
            for a in range(l):
                for c in range(d_g):
                    mat[a][l + c] = Hk[k][a][c]
                    mat[l + c][a] = sign * Hk[k][a][c]
        blocks[k] = mat
    return MatDiffOp(size, size, blocks)


def _prolong_vector(spec: LiftSpec, values: Sequence[JetPolynomial]) -> Tuple[JetPolynomial, ...]:
    fn = spec.prolong()
    return tuple(v.rename(fn) for v in values)


def check_prolongation(lifted: LiftedSystem) -> Tuple[JetPolynomial, ...]:
    """
    Residuals Jbar dHbar/dxbar (on the prolonged state) - D+ (J dH/dx)_sub.
    All entries vanish identically for a correct lift.
    """
    system = lifted.provenance
    spec = lifted.spec
    e_bar = _prolong_vector(spec, variational_gradient(lifted.density_bar, spec.l))
    lhs = apply(lifted.Jbar, e_bar)
    flow = apply(system.J, system.gradient())
    rhs = apply(lifted.D_plus, [flow[i - 1] for i in spec.states])
    return tuple(a - b for a, b in zip(lhs, rhs))


def check_dissipative_prolongation(dl: DissipativeLift) -> Tuple[JetPolynomial, ...]:
    """Same round trip for (Jbar - Gbar R Gbar*) against D+ (J - G R G*) dH/dx"""
    spec = dl.lifted.spec
    lhs = _prolong_vector(spec, dl.as_system().dynamics())
    flow = dl.lifted.provenance.dynamics()
    rhs = apply(dl.lifted.D_plus, [flow[i - 1] for i in spec.states])
    return tuple(a - b for a, b in zip(lhs, rhs))
