# FILE: src/ports.py

from dataclasses import dataclass, field
from fractions import Fraction
from math import sqrt
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate

from src.grid import SampledField
from src.jetexpr import (JetPolynomial, ManufacturedState, partial_derivative,
                         total_derivative, total_derivative_n)
from src.lift import HamiltonianSystem
from src.opalg import MatDiffOp, Matrix, SymmetryError, apply, formal_adjoint, require_skew

W_SCALE = 1 / sqrt(2)
W_SCALE_TEXT = '1/sqrt(2)'


class PortError(ValueError):
    """Port construction or evaluation failed"""


@dataclass(frozen=True)
class PortFrame:
    """
    Boundary port construction for a skew-adjoint operator of order m:
    traces tau(e) = (e, dz e, ..., dz^{m-1} e), block (i, j) of Q equal to
    (-1)^{i-1} P_{i+j-1}, and (f, e) = W (tau(b); tau(a)) with
    W = (1/sqrt 2) [[Q, -Q], [I, I]].
    """

    operator: MatDiffOp
    m: int
    n: int
    Q: Matrix

    @property
    def trace_order(self) -> int:
        return self.m - 1

    @property
    def size(self) -> int:
        return self.m * self.n

    @property
    def is_empty(self) -> bool:
        return self.m == 0

    def Q_array(self) -> np.ndarray:
        return np.array([[float(c) for c in row] for row in self.Q], dtype=float).reshape(self.size, self.size)

    def W_unscaled(self) -> List[List[Fraction]]:
        """[[Q, -Q], [I, I]]; the port map is this matrix times 1/sqrt(2)"""
        p = self.size
        rows = []
        for i in range(p):
            rows.append(list(self.Q[i]) + [-c for c in self.Q[i]])
        for i in range(p):
            rows.append([Fraction(int(i == j)) for j in range(p)] * 2)
        return rows

    def W_array(self) -> np.ndarray:
        p = self.size
        return W_SCALE * np.array([[float(c) for c in row] for row in self.W_unscaled()],
                                  dtype=float).reshape(2 * p, 2 * p)

    def to_json(self) -> Dict:
        return {
            'order': self.m,
            'n': self.n,
            'trace_order': self.trace_order,
            'Q': [[str(c) for c in row] for row in self.Q],
            'W': {'scale': W_SCALE_TEXT, 'matrix': [[str(c) for c in row] for row in self.W_unscaled()]},
        }


@dataclass(frozen=True)
class PortSample:
    f_boundary: np.ndarray
    e_boundary: np.ndarray

    @property
    def power(self) -> float:
        return float(np.dot(self.e_boundary, self.f_boundary))


def build_port_frame(J: MatDiffOp) -> PortFrame:
    try:
        require_skew(J)
    except SymmetryError as e:
        raise PortError(str(e)) from e
    m, n = J.order, J.rows
    if J.is_zero():
        m = 0
    p = m * n
    Q = [[Fraction(0)] * p for _ in range(p)]
    for bi in range(1, m + 1):
        for bj in range(1, m + 1):
            k = bi + bj - 1
            if k > m:
                continue
            Pk = J.coefficient(k)
            sign = (-1) ** (bi - 1)
            for r in range(n):
                for c in range(n):
                    Q[(bi - 1) * n + r][(bj - 1) * n + c] = sign * Pk[r][c]
    Qt = tuple(tuple(row) for row in Q)
    if any(Qt[i][j] != Qt[j][i] for i in range(p) for j in range(p)):
        raise PortError(f"Boundary matrix of {J.to_text()} is not symmetric")
    return PortFrame(J, m, n, Qt)


def evaluate_ports(frame: PortFrame, tau_a: Sequence[float], tau_b: Sequence[float]) -> PortSample:
    """(f; e) = W (tau_b; tau_a)"""
    tau_a = np.asarray(tau_a, dtype=float).ravel()
    tau_b = np.asarray(tau_b, dtype=float).ravel()
    if tau_a.size != frame.size or tau_b.size != frame.size:
        raise PortError(f"Trace vectors must have length {frame.size}, got {tau_a.size} and {tau_b.size}")
    if frame.is_empty:
        return PortSample(np.zeros(0), np.zeros(0))
    fe = frame.W_array() @ np.concatenate([tau_b, tau_a])
    return PortSample(fe[:frame.size], fe[frame.size:])


def symbolic_traces(frame: PortFrame, e: Sequence[JetPolynomial]) -> Tuple[JetPolynomial, ...]:
    """tau(e) stacked derivative-major: (e_1..e_n, dz e_1..dz e_n, ...)"""
    if len(e) != frame.n:
        raise PortError(f"Effort has {len(e)} components, frame expects {frame.n}")
    out = []
    for r in range(frame.m):
        out.extend(total_derivative_n(ei, r) for ei in e)
    return tuple(out)


def _bilinear(Q: Matrix, left: Sequence[JetPolynomial], right: Sequence[JetPolynomial]) -> JetPolynomial:
    acc = JetPolynomial()
    for i, row in enumerate(Q):
        for j, q in enumerate(row):
            if q:
                acc = acc + left[i] * right[j] * q
    return acc


def boundary_form(frame: PortFrame, e1: Sequence[JetPolynomial],
                  e2: Optional[Sequence[JetPolynomial]] = None) -> JetPolynomial:
    """tau(e1)^T Q tau(e2)"""
    t1 = symbolic_traces(frame, e1)
    t2 = t1 if e2 is None else symbolic_traces(frame, e2)
    return _bilinear(frame.Q, t1, t2)


def _dot(a: Sequence[JetPolynomial], b: Sequence[JetPolynomial]) -> JetPolynomial:
    return sum((x * y for x, y in zip(a, b)), JetPolynomial())


def pairing_integrand_residual(frame: PortFrame, e1: Sequence[JetPolynomial],
                               e2: Sequence[JetPolynomial]) -> JetPolynomial:
    """e1^T J e2 + (J e1)^T e2 - D_z(tau(e1)^T Q tau(e2)); identically zero"""
    J = frame.operator
    lhs = _dot(e1, apply(J, e2)) + _dot(apply(J, e1), e2)
    return lhs - total_derivative(boundary_form(frame, e1, e2))


def telescoping_residual(frame: PortFrame, e: Sequence[JetPolynomial]) -> JetPolynomial:
    """e^T J e + (J e)^T e - D_z(tau^T Q tau)"""
    return pairing_integrand_residual(frame, e, e)


def _integrate_z_polynomial(p: JetPolynomial, a: Fraction, b: Fraction) -> Fraction:
    if p.variables():
        raise PortError(f"'{p}' depends on jet variables; exact integration needs fields in z only")
    total = Fraction(0)
    for mono, c in p.items():
        k = mono.z_power + 1
        total += c * (b ** k - a ** k) / k
    return total


def _port_pairing_symbolic(frame: PortFrame, e1, e2, a: Fraction, b: Fraction) -> Fraction:
    t1 = symbolic_traces(frame, e1)
    t2 = symbolic_traces(frame, e2)
    at = lambda polys, z: [_evaluate_z_polynomial(p, z) for p in polys]
    ta1, tb1, ta2, tb2 = at(t1, a), at(t1, b), at(t2, a), at(t2, b)
    # e1^T f2 + e2^T f1 with (f; e) = W (tau_b; tau_a)
    total = Fraction(0)
    p = frame.size
    for i in range(p):
        for j in range(p):
            q = frame.Q[i][j]
            if not q:
                continue
            f2 = q * (tb2[j] - ta2[j])
            f1 = q * (tb1[j] - ta1[j])
            total += (tb1[i] + ta1[i]) * f2 / 2 + (tb2[i] + ta2[i]) * f1 / 2
    return total


def _evaluate_z_polynomial(p: JetPolynomial, z: Fraction) -> Fraction:
    return sum((c * z ** mono.z_power for mono, c in p.items()), Fraction(0))


def pairing_residual(frame: PortFrame, e1: Union[Sequence[JetPolynomial], SampledField],
                     e2: Union[Sequence[JetPolynomial], SampledField],
                     domain: Tuple = (0, 1)) -> float:
    """
    int e1^T J e2 + int (J e1)^T e2 - (e1_b^T f2_b + e2_b^T f1_b)

    Efforts are either polynomials in z (exact rational arithmetic) or
    sampled fields carrying derivatives up to the operator order
    (quadrature and boundary samples).
    """
    if isinstance(e1, SampledField) or isinstance(e2, SampledField):
        return _pairing_residual_sampled(frame, e1, e2)
    a, b = (Fraction(str(v)) if not isinstance(v, Fraction) else v for v in domain)
    J = frame.operator
    bulk = _dot(e1, apply(J, e2)) + _dot(apply(J, e1), e2)
    residual = _integrate_z_polynomial(bulk, a, b)
    if not frame.is_empty:
        residual -= _port_pairing_symbolic(frame, e1, e2, a, b)
    return float(residual)


def _sampled_traces(frame: PortFrame, e: SampledField, node: int) -> np.ndarray:
    return np.array([e.jets[i, r, node] for r in range(frame.m) for i in range(frame.n)])


def _pairing_residual_sampled(frame: PortFrame, e1: SampledField, e2: SampledField) -> float:
    J = frame.operator
    grid = e1.grid

    def J_applied(e: SampledField) -> np.ndarray:
        out = np.zeros((J.rows, grid.N))
        for k, Pk in J.coeffs.items():
            out += J.to_numpy(k) @ e.jets[:, k, :]
        return out

    bulk = np.sum(e1.values * J_applied(e2), axis=0) + np.sum(J_applied(e1) * e2.values, axis=0)
    residual = grid.integrate(bulk)
    if not frame.is_empty:
        s1 = evaluate_ports(frame, _sampled_traces(frame, e1, 0), _sampled_traces(frame, e1, -1))
        s2 = evaluate_ports(frame, _sampled_traces(frame, e2, 0), _sampled_traces(frame, e2, -1))
        residual -= float(np.dot(s1.e_boundary, s2.f_boundary) + np.dot(s2.e_boundary, s1.f_boundary))
    return residual


def structure_operator(system: HamiltonianSystem) -> MatDiffOp:
    """J, or the skew composite [[J, G], [-G*, 0]] when the system dissipates"""
    if not system.is_dissipative:
        return system.J
    return MatDiffOp.block([
        [system.J, system.G],
        [-formal_adjoint(system.G), MatDiffOp.zero(system.d_g, system.d_g)],
    ])


def energy_rate_density(system: HamiltonianSystem,
                        flow: Optional[Sequence[JetPolynomial]] = None) -> JetPolynomial:
    """Chain rule sum_{i,j} dH/du_{i,j} D_z^j (x_t)_i"""
    flow = flow if flow is not None else system.dynamics()
    acc = JetPolynomial()
    for v in system.density.support:
        dH = partial_derivative(system.density.density, v)
        acc = acc + dH * total_derivative_n(flow[v.state_index - 1], v.deriv_order)
    return acc


def boundary_bracket(system: HamiltonianSystem,
                     flow: Optional[Sequence[JetPolynomial]] = None) -> JetPolynomial:
    """
    B with dH/dt = int dH/dx^T x_t dz + [B]_a^b, where
    B = sum_{i, j >= 1} sum_{r < j} (-D_z)^r(dH/du_{i,j}) D_z^{j-1-r}(x_t)_i.
    B vanishes for derivative-free densities.
    """
    flow = flow if flow is not None else system.dynamics()
    acc = JetPolynomial()
    for v in system.density.support:
        if v.deriv_order == 0:
            continue
        dH = partial_derivative(system.density.density, v)
        for r in range(v.deriv_order):
            left = total_derivative_n(dH, r)
            left = left if r % 2 == 0 else -left
            acc = acc + left * total_derivative_n(flow[v.state_index - 1], v.deriv_order - 1 - r)
    return acc


@dataclass
class DefectReport:
    """Energy rate vs. port power on a manufactured state, exact traces"""

    dH_dt: float
    port_power: float
    bracket: float
    printed_bracket: Optional[float] = None
    dissipation: float = 0.0
    extra: Dict[str, float] = field(default_factory=dict)

    @property
    def defect(self) -> float:
        return self.dH_dt - self.port_power

    @property
    def relative_error(self) -> float:
        """|defect - bracket| relative to the bracket (absolute when the bracket is 0)"""
        scale = abs(self.bracket) if self.bracket else 1.0
        return abs(self.defect + self.dissipation - self.bracket) / scale

    def to_dict(self) -> Dict:
        out = {
            'dH_dt': self.dH_dt,
            'port_power': self.port_power,
            'defect': self.defect,
            'bracket': self.bracket,
            'dissipation': self.dissipation,
            'relative_error': self.relative_error,
        }
        if self.printed_bracket is not None:
            out['printed_bracket'] = self.printed_bracket
        out.update(self.extra)
        return out


def energy_defect(system: HamiltonianSystem, state: ManufacturedState,
                  domain: Optional[Tuple[float, float]] = None,
                  quad_tol: float = 1e-12) -> DefectReport:
    """
    dH/dt (chain rule, adaptive quadrature) against the port power of the
    structure operator, both evaluated with exact derivatives of a
    closed-form state. For dissipative systems the effort is (dH/dx; R F)
    with F = -G* dH/dx and the dissipation int phi^T F is reported.
    """
    a, b = domain or system.domain
    gradient = system.gradient()
    rate = energy_rate_density(system)
    rate_value, _ = integrate.quad(lambda z: state.evaluate(rate, z), a, b,
                                   epsabs=quad_tol, epsrel=quad_tol, limit=200)

    C = structure_operator(system)
    effort = list(gradient)
    dissipation = 0.0
    if system.is_dissipative:
        F = [-f for f in apply(formal_adjoint(system.G), gradient)]
        phi = system.R.apply(F)
        effort.extend(phi)
        phiF = _dot(phi, F)
        dissipation, _ = integrate.quad(lambda z: state.evaluate(phiF, z), a, b,
                                        epsabs=quad_tol, epsrel=quad_tol, limit=200)
    frame = build_port_frame(C)
    power = 0.0
    if not frame.is_empty:
        traces = symbolic_traces(frame, effort)
        tau_a = [state.evaluate(t, a) for t in traces]
        tau_b = [state.evaluate(t, b) for t in traces]
        power = evaluate_ports(frame, tau_a, tau_b).power
    B = boundary_bracket(system)
    bracket = state.evaluate(B, b) - state.evaluate(B, a)
    return DefectReport(rate_value, power, bracket, dissipation=dissipation)


def kdv_defect(x_field: Union[str, ManufacturedState], system: HamiltonianSystem,
               domain: Optional[Tuple[float, float]] = None) -> DefectReport:
    """
    Defect dH/dt - e^T f of the scalar KdV system. The chain rule gives the
    bracket [-dz x * dz(dH/dx)]_a^b; the form [dz x * dH/dx]_a^b is reported
    alongside as `printed_bracket`.
    """
    if system.n != 1:
        raise PortError(f"KdV defect needs a scalar model, got n = {system.n}")
    state = x_field if isinstance(x_field, ManufacturedState) else ManufacturedState([x_field])
    report = energy_defect(system, state, domain)
    a, b = domain or system.domain
    delta = system.gradient()[0]
    printed = JetPolynomial.var(1, 1) * delta
    report.printed_bracket = state.evaluate(printed, b) - state.evaluate(printed, a)
    return report
