# FILE: src/jetexpr.py

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import sympy

from src.grid import GridResolutionError, SampledField


class JetExprError(ValueError):
    """Malformed jet expression or inadmissible input to a jet operation"""


Number = Union[int, Fraction]


def as_fraction(value) -> Fraction:
    """Exact rational from int / Fraction / rational string; floats are rejected"""
    if isinstance(value, bool):
        raise JetExprError("Boolean is not a coefficient")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, Rational):
        return Fraction(value.numerator, value.denominator)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except ValueError as e:
            raise JetExprError(f"Not a rational literal: '{value}'") from e
    raise JetExprError(f"Coefficients must be exact rationals, got {type(value).__name__} {value!r}")


@dataclass(frozen=True, order=True)
class JetVar:
    """The jet coordinate u_{i,j} = d^j x_i / dz^j"""

    state_index: int
    deriv_order: int = 0

    def __post_init__(self):
        if not isinstance(self.state_index, int) or self.state_index < 1:
            raise JetExprError(f"State index must be an integer >= 1, got {self.state_index!r}")
        if not isinstance(self.deriv_order, int) or self.deriv_order < 0:
            raise JetExprError(f"Derivative order must be an integer >= 0, got {self.deriv_order!r}")

    def prolong(self, k: int = 1) -> 'JetVar':
        return JetVar(self.state_index, self.deriv_order + k)

    def name(self, state_names: Optional[Sequence[str]] = None) -> str:
        if state_names is not None:
            base = state_names[self.state_index - 1]
        else:
            base = f"x{self.state_index}"
        if self.deriv_order == 0:
            return base
        if self.deriv_order == 1:
            return f"dz({base})"
        return f"dz{self.deriv_order}({base})"

    def __str__(self):
        return self.name()


@dataclass(frozen=True)
class Monomial:
    """z^a times a product of jet-variable powers, factors kept sorted"""

    z_power: int = 0
    powers: Tuple[Tuple[JetVar, int], ...] = ()

    @classmethod
    def build(cls, factors: Mapping[JetVar, int], z_power: int = 0) -> 'Monomial':
        return cls(z_power, tuple(sorted((v, e) for v, e in factors.items() if e)))

    @property
    def degree(self) -> int:
        return self.z_power + sum(e for _, e in self.powers)

    def factors(self) -> Dict[JetVar, int]:
        return dict(self.powers)

    def __mul__(self, other: 'Monomial') -> 'Monomial':
        merged = self.factors()
        for v, e in other.powers:
            merged[v] = merged.get(v, 0) + e
        return Monomial.build(merged, self.z_power + other.z_power)

    def sort_key(self):
        return (self.degree,
                tuple((v.state_index, v.deriv_order, e) for v, e in self.powers),
                self.z_power)


ONE = Monomial()
Z = Monomial(1)


class JetPolynomial:
    """
    Polynomial in jet variables and z with exact rational coefficients

    The term map never stores zero coefficients, so two polynomials are
    mathematically equal iff their term maps are equal.
    """

    __slots__ = ('_terms', '_hash')

    def __init__(self, terms: Optional[Mapping[Monomial, Number]] = None):
        clean: Dict[Monomial, Fraction] = {}
        for mono, coeff in (terms or {}).items():
            c = as_fraction(coeff)
            if c:
                clean[mono] = clean.get(mono, Fraction(0)) + c
        self._terms = {m: c for m, c in clean.items() if c}
        self._hash = None

    # constructors

    @classmethod
    def constant(cls, value: Number) -> 'JetPolynomial':
        return cls({ONE: value})

    @classmethod
    def var(cls, state_index: int, deriv_order: int = 0) -> 'JetPolynomial':
        return cls({Monomial.build({JetVar(state_index, deriv_order): 1}): 1})

    @classmethod
    def of(cls, v: JetVar) -> 'JetPolynomial':
        return cls({Monomial.build({v: 1}): 1})

    @classmethod
    def z(cls) -> 'JetPolynomial':
        return cls({Z: 1})

    @classmethod
    def parse(cls, text: str, state_names: Optional[Sequence[str]] = None,
              params: Optional[Mapping[str, Fraction]] = None) -> 'JetPolynomial':
        from src.expr_parser import parse_expression
        return parse_expression(text, state_names=state_names, params=params)

    # structure

    @property
    def terms(self) -> Dict[Monomial, Fraction]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(m == ONE for m in self._terms)

    def constant_value(self) -> Fraction:
        if not self.is_constant():
            raise JetExprError(f"'{self}' is not a constant")
        return self._terms.get(ONE, Fraction(0))

    def variables(self) -> Tuple[JetVar, ...]:
        found = {v for m in self._terms for v, _ in m.powers}
        return tuple(sorted(found))

    def max_order(self) -> int:
        return max((v.deriv_order for v in self.variables()), default=0)

    def max_state(self) -> int:
        return max((v.state_index for v in self.variables()), default=0)

    def z_degree(self) -> int:
        return max((m.z_power for m in self._terms), default=0)

    def depends_on_z(self) -> bool:
        return any(m.z_power for m in self._terms)

    def degree(self) -> int:
        return max((m.degree for m in self._terms), default=0)

    def sorted_terms(self) -> List[Tuple[Monomial, Fraction]]:
        return sorted(self._terms.items(), key=lambda mc: mc[0].sort_key(), reverse=True)

    # arithmetic

    @staticmethod
    def _coerce(other) -> 'JetPolynomial':
        if isinstance(other, JetPolynomial):
            return other
        return JetPolynomial.constant(as_fraction(other))

    def __add__(self, other) -> 'JetPolynomial':
        other = self._coerce(other)
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, Fraction(0)) + c
        return JetPolynomial(out)

    __radd__ = __add__

    def __neg__(self) -> 'JetPolynomial':
        return JetPolynomial({m: -c for m, c in self._terms.items()})

    def __sub__(self, other) -> 'JetPolynomial':
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> 'JetPolynomial':
        return self._coerce(other) - self

    def __mul__(self, other) -> 'JetPolynomial':
        if not isinstance(other, JetPolynomial):
            c = as_fraction(other)
            return JetPolynomial({m: c * v for m, v in self._terms.items()})
        out: Dict[Monomial, Fraction] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = m1 * m2
                out[m] = out.get(m, Fraction(0)) + c1 * c2
        return JetPolynomial(out)

    __rmul__ = __mul__

    def __truediv__(self, other) -> 'JetPolynomial':
        if isinstance(other, JetPolynomial):
            other = other.constant_value()
        c = as_fraction(other)
        if c == 0:
            raise JetExprError("Division by zero")
        return self * (1 / c)

    def __pow__(self, exponent: int) -> 'JetPolynomial':
        if not isinstance(exponent, int) or exponent < 0:
            raise JetExprError(f"Exponents must be non-negative integers, got {exponent!r}")
        result = JetPolynomial.constant(1)
        base = self
        while exponent:
            if exponent & 1:
                result = result * base
            base = base * base
            exponent >>= 1
        return result

    def __eq__(self, other) -> bool:
        if isinstance(other, JetPolynomial):
            return self._terms == other._terms
        try:
            return self._terms == JetPolynomial.constant(as_fraction(other))._terms
        except JetExprError:
            return NotImplemented

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def __bool__(self):
        return bool(self._terms)

    # substitution

    def substitute(self, mapping: Mapping[JetVar, 'JetPolynomial']) -> 'JetPolynomial':
        """Replace jet variables by polynomials; unmapped variables stay"""
        result = JetPolynomial()
        for mono, coeff in self._terms.items():
            term = JetPolynomial({Monomial(mono.z_power): coeff})
            for v, e in mono.powers:
                factor = mapping.get(v)
                term = term * (factor ** e if factor is not None else JetPolynomial.of(v) ** e)
            result = result + term
        return result

    def rename(self, fn: Callable[[JetVar], JetVar]) -> 'JetPolynomial':
        out: Dict[Monomial, Fraction] = {}
        for mono, coeff in self._terms.items():
            factors: Dict[JetVar, int] = {}
            for v, e in mono.powers:
                w = fn(v)
                factors[w] = factors.get(w, 0) + e
            m = Monomial.build(factors, mono.z_power)
            out[m] = out.get(m, Fraction(0)) + coeff
        return JetPolynomial(out)

    # evaluation

    def compile(self) -> 'CompiledPolynomial':
        return CompiledPolynomial(self)

    def evaluate(self, lookup: Callable[[JetVar], np.ndarray], z=None):
        return self.compile()(lookup, z)

    def evaluate_field(self, field_samples: SampledField) -> np.ndarray:
        return self.compile().on_field(field_samples)

    # rendering

    def to_text(self, state_names: Optional[Sequence[str]] = None) -> str:
        if not self._terms:
            return "0"
        pieces = []
        for mono, coeff in self.sorted_terms():
            factors = []
            for v, e in mono.powers:
                name = v.name(state_names)
                factors.append(name if e == 1 else f"{name}^{e}")
            if mono.z_power:
                factors.append("z" if mono.z_power == 1 else f"z^{mono.z_power}")
            sign = '-' if coeff < 0 else '+'
            mag = abs(coeff)
            if not factors:
                body = str(mag)
            elif mag == 1:
                body = "*".join(factors)
            else:
                body = f"{mag}*" + "*".join(factors)
            pieces.append((sign, body))
        first_sign, first_body = pieces[0]
        text = ('-' if first_sign == '-' else '') + first_body
        for sign, body in pieces[1:]:
            text += f" {sign} {body}"
        return text

    def __str__(self):
        return self.to_text()

    def __repr__(self):
        return f"JetPolynomial('{self.to_text()}')"

    def to_sympy(self, state_names: Optional[Sequence[str]] = None, z: Optional[sympy.Symbol] = None):
        """sympy expression with x_i as functions of z and jet variables as derivatives"""
        z = z if z is not None else sympy.Symbol('z')
        funcs: Dict[int, sympy.Expr] = {}
        expr = sympy.Integer(0)
        for mono, coeff in self._terms.items():
            term = sympy.Rational(coeff.numerator, coeff.denominator) * z ** mono.z_power
            for v, e in mono.powers:
                if v.state_index not in funcs:
                    name = state_names[v.state_index - 1] if state_names else f"x{v.state_index}"
                    funcs[v.state_index] = sympy.Function(name)(z)
                f = funcs[v.state_index]
                term *= (f.diff(z, v.deriv_order) if v.deriv_order else f) ** e
            expr += term
        return expr

    def to_latex(self, state_names: Optional[Sequence[str]] = None) -> str:
        return sympy.latex(self.to_sympy(state_names))


class CompiledPolynomial:
    """Float evaluator of a JetPolynomial over sampled jet variables"""

    def __init__(self, poly: JetPolynomial):
        self.terms = [(float(c), m.z_power, m.powers) for m, c in poly.items()]
        self.variables = poly.variables()

    def __call__(self, lookup: Callable[[JetVar], np.ndarray], z=None):
        total = 0.0
        for coeff, z_power, powers in self.terms:
            term = coeff
            if z_power:
                if z is None:
                    raise JetExprError("Expression depends on z but no z samples were given")
                term = term * z ** z_power
            for v, e in powers:
                term = term * lookup(v) ** e
            total = total + term
        if z is not None:
            return np.broadcast_to(np.asarray(total, dtype=float), np.shape(z)).copy()
        return total

    def on_field(self, field_samples: SampledField) -> np.ndarray:
        return self(lambda v: field_samples.jet(v.state_index, v.deriv_order), field_samples.grid.points)


def total_derivative(p: JetPolynomial) -> JetPolynomial:
    """D_z with D_z(u_{i,j}) = u_{i,j+1} and D_z(z) = 1"""
    out: Dict[Monomial, Fraction] = {}

    def add(m: Monomial, c: Fraction):
        out[m] = out.get(m, Fraction(0)) + c

    for mono, coeff in p.items():
        factors = mono.factors()
        if mono.z_power:
            add(Monomial(mono.z_power - 1, mono.powers), coeff * mono.z_power)
        for v, e in mono.powers:
            f = dict(factors)
            f[v] = e - 1
            w = v.prolong()
            f[w] = f.get(w, 0) + 1
            add(Monomial.build(f, mono.z_power), coeff * e)
    return JetPolynomial(out)


def total_derivative_n(p: JetPolynomial, k: int) -> JetPolynomial:
    for _ in range(k):
        p = total_derivative(p)
    return p


def partial_derivative(p: JetPolynomial, v: JetVar) -> JetPolynomial:
    out: Dict[Monomial, Fraction] = {}
    for mono, coeff in p.items():
        factors = mono.factors()
        e = factors.get(v, 0)
        if not e:
            continue
        factors[v] = e - 1
        m = Monomial.build(factors, mono.z_power)
        out[m] = out.get(m, Fraction(0)) + coeff * e
    return JetPolynomial(out)


@dataclass(frozen=True)
class DensityProfile:
    """A Hamiltonian density together with the jet variables it depends on"""

    density: JetPolynomial
    support: Tuple[JetVar, ...] = field(default=())
    max_order: int = 0

    @classmethod
    def of(cls, density: Union[JetPolynomial, 'DensityProfile']) -> 'DensityProfile':
        if isinstance(density, DensityProfile):
            return density
        return cls(density)

    def __post_init__(self):
        support = self.density.variables()
        if self.support and tuple(self.support) != support:
            raise JetExprError("Density support does not match the variables occurring in the density")
        object.__setattr__(self, 'support', support)
        object.__setattr__(self, 'max_order', self.density.max_order())

    def depends_on(self, v: JetVar) -> bool:
        return v in self.support

    def state_count(self) -> int:
        return self.density.max_state()


def euler_derivative(d: Union[DensityProfile, JetPolynomial], state_index: int) -> JetPolynomial:
    """
    Variational derivative sum_{j >= 0} (-D_z)^j dH/du_{i,j}

    The j = 0 term is included; dropping it would lose the algebraic
    dependence on x_i.
    """
    d = DensityProfile.of(d)
    if not isinstance(state_index, int) or state_index < 1:
        raise JetExprError(f"State index must be >= 1, got {state_index!r}")
    result = JetPolynomial()
    orders = [v.deriv_order for v in d.support if v.state_index == state_index]
    for j in range(max(orders, default=-1) + 1):
        term = partial_derivative(d.density, JetVar(state_index, j))
        term = total_derivative_n(term, j)
        result = result + (term if j % 2 == 0 else -term)
    return result


def variational_gradient(d: Union[DensityProfile, JetPolynomial], n: int) -> Tuple[JetPolynomial, ...]:
    d = DensityProfile.of(d)
    if d.state_count() > n:
        raise JetExprError(f"Density references state {d.state_count()} but the system has {n} states")
    return tuple(euler_derivative(d, i) for i in range(1, n + 1))


@dataclass
class GateauxReport:
    """Euler derivative paired with a test function vs. a difference quotient of the functional"""

    symbolic_pairing: float
    gateaux: Dict[float, float]
    errors: Dict[float, float]
    best_epsilon: float
    best_error: float

    def passed(self, tol: float = 1e-6) -> bool:
        return self.best_error <= tol

    def to_dict(self) -> Dict:
        return {
            'symbolic_pairing': self.symbolic_pairing,
            'gateaux': {repr(k): v for k, v in self.gateaux.items()},
            'relative_errors': {repr(k): v for k, v in self.errors.items()},
            'best_epsilon': self.best_epsilon,
            'best_error': self.best_error,
        }


def functional_value(d: Union[DensityProfile, JetPolynomial], x: SampledField) -> float:
    """Quadrature of the density on a sampled state"""
    d = DensityProfile.of(d)
    if d.density.is_zero():
        return 0.0
    return x.grid.integrate(d.density.evaluate_field(x))


def check_euler_vs_gateaux(d: Union[DensityProfile, JetPolynomial], x: SampledField, eta: SampledField,
                           h_sweep: Iterable[float] = (1e-3, 1e-4),
                           vanish_tol: float = 1e-8) -> GateauxReport:
    """
    Compare the symbolic Euler derivative with the defining limit
    d/de H[x + e*eta] at e = 0, approximated by centered differences.

    Args:
        d: density
        x: state samples carrying derivatives up to order 2*m_d
        eta: test function samples carrying derivatives up to order m_d
        h_sweep: difference steps e

    Returns:
        GateauxReport with the relative error per step and the best one
    """
    d = DensityProfile.of(d)
    grid = x.grid
    m = d.max_order
    if grid.N < 4 * (2 * m + 1):
        raise GridResolutionError(
            f"N = {grid.N} is too coarse for derivatives of order {m} (need N >= {4 * (2 * m + 1)})"
        )
    if x.max_order < 2 * m:
        raise GridResolutionError(f"State samples need derivatives up to order {2 * m}, got {x.max_order}")
    if eta.max_order < m:
        raise GridResolutionError(f"Test function samples need derivatives up to order {m}, got {eta.max_order}")
    if eta.n != x.n or eta.grid != grid:
        raise JetExprError("Test function and state live on different grids or dimensions")
    if d.state_count() > x.n:
        raise JetExprError(f"Density references state {d.state_count()} but samples carry {x.n}")

    if not grid.periodic:
        scale = max(float(np.max(np.abs(eta.values))), 1.0)
        for j in range(m + 1):
            ends = np.abs(eta.jets[:, j, [0, -1]])
            if np.max(ends) > vanish_tol * scale:
                raise JetExprError(f"Test function derivative of order {j} does not vanish at the end points")

    pairing = 0.0
    e_norm_sq = 0.0
    for i, e_i in enumerate(variational_gradient(d, x.n), start=1):
        if e_i.is_zero():
            continue
        e_samples = e_i.evaluate_field(x)
        pairing += grid.integrate(e_samples * eta.jet(i, 0))
        e_norm_sq += grid.integrate(e_samples ** 2)
    eta_norm = math.sqrt(sum(grid.integrate(eta.jet(i, 0) ** 2) for i in range(1, x.n + 1)))
    # |pairing| <= floor (Cauchy-Schwarz)
    floor = math.sqrt(e_norm_sq) * eta_norm

    gateaux: Dict[float, float] = {}
    errors: Dict[float, float] = {}
    for eps in h_sweep:
        plus = functional_value(d, x + eps * eta)
        minus = functional_value(d, x + (-eps) * eta)
        fd = (plus - minus) / (2 * eps)
        gateaux[eps] = fd
        scale = max(abs(pairing), abs(fd), floor)
        errors[eps] = 0.0 if scale == 0.0 else abs(fd - pairing) / scale
    best_eps = min(errors, key=errors.get)
    return GateauxReport(pairing, gateaux, errors, best_eps, errors[best_eps])


class ManufacturedState:
    """Closed-form state x_i(z) with exact derivatives through sympy"""

    def __init__(self, exprs: Sequence[Union[str, sympy.Expr]]):
        self.z = sympy.Symbol('z')
        self.exprs = tuple(sympy.sympify(e, locals={'z': self.z}) for e in exprs)
        self._derivs: Dict[JetVar, sympy.Expr] = {}
        self._funcs: Dict[JetVar, Callable] = {}

    @property
    def n(self) -> int:
        return len(self.exprs)

    def derivative(self, v: JetVar) -> sympy.Expr:
        if v.state_index > self.n:
            raise JetExprError(f"State {v.state_index} is not part of a {self.n}-component state")
        if v not in self._derivs:
            self._derivs[v] = sympy.diff(self.exprs[v.state_index - 1], self.z, v.deriv_order)
        return self._derivs[v]

    def function(self, v: JetVar) -> Callable:
        if v not in self._funcs:
            self._funcs[v] = sympy.lambdify(self.z, self.derivative(v), modules='numpy')
        return self._funcs[v]

    def evaluate(self, poly: JetPolynomial, z):
        """Value of a jet polynomial on the prolonged state at z (scalar or array)"""
        z_arr = np.asarray(z, dtype=float)
        lookup = lambda v: np.broadcast_to(np.asarray(self.function(v)(z_arr), dtype=float), z_arr.shape)
        value = poly.compile()(lookup, z_arr)
        return float(value) if np.ndim(value) == 0 else value

    def sample(self, grid, max_order: int) -> SampledField:
        return SampledField.from_sympy(self.exprs, grid, max_order)
