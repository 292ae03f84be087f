# FILE: src/certificates.py

import math
import random
from dataclasses import dataclass, field
from datetime import datetime
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import get_settings, status
from src.grid import BOUNDED, COMPOSED, PERIODIC, Grid, SampledField, StencilSet
from src.jetexpr import JetPolynomial, JetVar, ManufacturedState, check_euler_vs_gateaux
from src.lift import (HamiltonianSystem, LiftedSystem, check_dissipative_prolongation, check_prolongation,
                      coefficients_closed_form, composite_operator, g_coefficients_closed_form,
                      infer_lift_spec, lift_dissipative, lift_hamiltonian)
from src.model_parser import ModelDoc, build_system, doc_from_system, initial_state, print_model
from src.numerics import (RK4_STABILITY_LIMIT, SemiDiscreteSystem, Trajectory, consistency_check,
                          discretize, estimate_spectral_radius, instantaneous_balance, integrate,
                          prolong_state)
from src.opalg import MatDiffOp, classify_symmetry
from src.ports import PortFrame, build_port_frame, pairing_residual, structure_operator, telescoping_residual

REPORT_VERSION = 1
CHECKS = ('skew', 'lift-consistency', 'euler', 'ports')


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {'check': self.name, 'passed': self.passed, 'details': self.details}


@dataclass
class LiftBundle:
    """Original system with its lift; `lifted` is the lifted system as a HamiltonianSystem"""

    system: HamiltonianSystem
    lifted_model: LiftedSystem
    lifted: HamiltonianSystem
    dissipative_lift: Any = None


def lift_model(doc: ModelDoc) -> LiftBundle:
    system = build_system(doc)
    spec = infer_lift_spec(system.density, system.n)
    if system.is_dissipative:
        dl = lift_dissipative(system, spec)
        return LiftBundle(system, dl.lifted, dl.as_system(), dl)
    lifted = lift_hamiltonian(system, spec)
    return LiftBundle(system, lifted, lifted.as_system())


def lift_document(doc: ModelDoc) -> Tuple[ModelDoc, Dict[str, Any]]:
    """Lifted model text plus the JSON summary of its operators"""
    bundle = lift_model(doc)
    spec = bundle.lifted_model.spec
    initial = ()
    if doc.initial:
        initial = tuple(_lifted_initial(doc, spec, bundle.lifted.state_names))
    lifted_doc = doc_from_system(bundle.lifted, doc.boundary, initial)
    summary = {
        'version': REPORT_VERSION,
        'model': doc.name,
        'lift_entries': spec.to_json(),
        'states': list(bundle.lifted.state_names),
        'J': bundle.lifted.J.to_json(),
        'J_text': bundle.lifted.J.to_text(),
        'hamiltonian': bundle.lifted.density.density.to_text(bundle.lifted.state_names),
    }
    if bundle.dissipative_lift is not None:
        dl = bundle.dissipative_lift
        summary['G'] = dl.Gbar.to_json()
        summary['G_text'] = dl.Gbar.to_text()
        summary['R'] = dl.R.to_text()
        summary['composite'] = dl.composite.to_json()
        summary['composite_text'] = dl.composite.to_text()
    return lifted_doc, summary


def _lifted_initial(doc: ModelDoc, spec, lifted_names: Sequence[str]) -> List[Tuple[str, str]]:
    state = initial_state(doc)
    out = []
    for (i, j), name in zip(spec.entries, lifted_names):
        out.append((name, str(state.derivative(JetVar(i, j)))))
    return out


# check suites

def check_skew(doc: ModelDoc) -> CheckResult:
    """Structure operator, composite and lifted operators are formally skew-adjoint"""
    system = build_system(doc)
    details: Dict[str, Any] = {'operator': classify_symmetry(system.J).value}
    passed = details['operator'] == 'skew_adjoint'
    if system.is_dissipative:
        details['composite'] = classify_symmetry(structure_operator(system)).value
        passed &= details['composite'] == 'skew_adjoint'
    bundle = lift_model(doc)
    details['lifted_operator'] = classify_symmetry(bundle.lifted.J).value
    passed &= details['lifted_operator'] == 'skew_adjoint'
    if bundle.dissipative_lift is not None:
        details['lifted_composite'] = classify_symmetry(bundle.dissipative_lift.composite).value
        passed &= details['lifted_composite'] == 'skew_adjoint'
    return CheckResult('skew', passed, details)


def _sample(state: ManufacturedState, grid: Grid) -> np.ndarray:
    z = grid.points
    return np.vstack([
        np.broadcast_to(np.asarray(state.function(JetVar(i, 0))(z), dtype=float), z.shape)
        for i in range(1, state.n + 1)
    ])


def _spectral_radius(systems: Sequence[SemiDiscreteSystem], states: Sequence[np.ndarray]) -> float:
    return max(estimate_spectral_radius(sd, x) for sd, x in zip(systems, states))


def numeric_lift_consistency(doc: ModelDoc, N: int = 64, steps: int = 20,
                             growth_budget: float = 1.0) -> Dict[str, Any]:
    """
    Original and lifted semi-discrete systems on a periodic grid with composed
    stencils, integrated over a few steps; the lifted trajectory must equal the
    discrete prolongation of the original one up to roundoff.

    The horizon satisfies rho * t_end <= growth_budget, so roundoff differences
    grow at most by exp(growth_budget), growing modes included.
    """
    bundle = lift_model(doc)
    spec = bundle.lifted_model.spec
    a, b = doc.domain_floats()
    grid = Grid(a, b, N, PERIODIC)
    sd = discretize(bundle.system, grid, derivative_mode=COMPOSED)
    sd_bar = discretize(bundle.lifted, grid, derivative_mode=COMPOSED)
    x0 = _sample(initial_state(doc), grid)
    x0_bar = prolong_state(x0, spec, sd.stencils)
    rho = max(_spectral_radius([sd, sd_bar], [x0, x0_bar]), 1e-12)
    bound = RK4_STABILITY_LIMIT * get_settings().cfl_safety
    dt = min(0.5 * bound / rho, growth_budget / (rho * steps))
    traj = integrate(sd, x0, dt, steps * dt, monitor=False, check_stability=False)
    traj_bar = integrate(sd_bar, x0_bar, dt, steps * dt, monitor=False, check_stability=False)
    report = consistency_check(traj, traj_bar, spec, sd.stencils)
    scale = max(1.0, float(np.max(np.abs(np.stack(traj_bar.states)))))
    worst = max(report.max_errors)
    return {
        'N': N,
        'dt': dt,
        'steps': steps,
        'spectral_radius': rho,
        'growth_bound': math.exp(rho * steps * dt),
        'sup_errors': report.errors[0],
        'relative_error': worst / scale,
        'passed': worst <= 1e-8 * scale,
    }


def check_lift_consistency(doc: ModelDoc, numeric: bool = True) -> CheckResult:
    """Symbolic round trip, closed-form coefficients, and (optionally) discrete trajectories"""
    bundle = lift_model(doc)
    lifted = bundle.lifted_model
    spec = lifted.spec
    residuals = check_prolongation(lifted)
    details: Dict[str, Any] = {
        'lift_entries': spec.to_json(),
        'prolongation_residuals': [str(r) for r in residuals],
    }
    passed = all(r.is_zero() for r in residuals)
    closed = MatDiffOp(spec.l, spec.l, coefficients_closed_form(bundle.system, spec))
    details['closed_form_matches'] = closed == lifted.Jbar
    passed &= details['closed_form_matches']
    if bundle.dissipative_lift is not None:
        dl = bundle.dissipative_lift
        diss = check_dissipative_prolongation(dl)
        details['dissipative_residuals'] = [str(r) for r in diss]
        passed &= all(r.is_zero() for r in diss)
        G_closed = MatDiffOp(spec.l, bundle.system.d_g, g_coefficients_closed_form(bundle.system, spec))
        details['closed_form_G_matches'] = G_closed == dl.Gbar
        details['closed_form_composite_matches'] = composite_operator(dl) == dl.composite
        passed &= details['closed_form_G_matches'] and details['closed_form_composite_matches']
    if numeric:
        details['trajectories'] = numeric_lift_consistency(doc)
        passed &= details['trajectories']['passed']
    return CheckResult('lift-consistency', bool(passed), details)


def _bump(doc: ModelDoc) -> str:
    """Test function vanishing to eighth order at both ends, tilted off the midpoint symmetry"""
    a, b = doc.domain
    s = f"(z - ({a}))/({b - a})"
    return f"sin(pi*{s})**8*(1 + {s})"


def check_euler(doc: ModelDoc, N: int = 401, tol: float = 1e-6) -> CheckResult:
    """Euler derivative against the Gateaux difference quotient on the initial state"""
    system = build_system(doc)
    a, b = doc.domain_floats()
    grid = Grid(a, b, N, BOUNDED)
    m = system.density.max_order
    state = initial_state(doc)
    x = state.sample(grid, 2 * m)
    bump = _bump(doc)
    eta = SampledField.from_sympy([bump] * system.n, grid, m)
    report = check_euler_vs_gateaux(system.density, x, eta)
    details = report.to_dict()
    details['N'] = N
    return CheckResult('euler', report.passed(tol), details)


def _random_effort(rng: random.Random, n: int, max_order: int = 2, terms: int = 3) -> JetPolynomial:
    poly = JetPolynomial()
    for _ in range(terms):
        mono = JetPolynomial.constant(Fraction(rng.randint(-5, 5), rng.randint(1, 4)))
        for _ in range(rng.randint(0, 2)):
            mono = mono * JetPolynomial.var(rng.randint(1, n), rng.randint(0, max_order))
        if rng.random() < 0.3:
            mono = mono * JetPolynomial.z()
        poly = poly + mono
    return poly


def _random_z_polynomial(rng: random.Random, degree: int = 3) -> JetPolynomial:
    return sum((JetPolynomial.constant(Fraction(rng.randint(-6, 6), rng.randint(1, 3))) * JetPolynomial.z() ** k
                for k in range(degree + 1)), JetPolynomial())


def _frame_checks(frame: PortFrame, doc: ModelDoc, rng: random.Random, trials: int) -> Dict[str, Any]:
    telescoping = all(telescoping_residual(frame, [_random_effort(rng, frame.n) for _ in range(frame.n)]).is_zero()
                      for _ in range(trials))
    worst = 0.0
    for _ in range(trials):
        e1 = [_random_z_polynomial(rng) for _ in range(frame.n)]
        e2 = [_random_z_polynomial(rng) for _ in range(frame.n)]
        worst = max(worst, abs(pairing_residual(frame, e1, e2, doc.domain)))
    return {'frame': frame.to_json(), 'telescoping': telescoping, 'pairing_residual': worst}


def check_ports(doc: ModelDoc, trials: int = 10, seed: Optional[int] = None) -> CheckResult:
    """Q, W for original and lifted structure operators; telescoping and pairing identities"""
    rng = random.Random(get_settings().random_seed if seed is None else seed)
    bundle = lift_model(doc)
    details = {
        'original': _frame_checks(build_port_frame(structure_operator(bundle.system)), doc, rng, trials),
        'lifted': _frame_checks(build_port_frame(structure_operator(bundle.lifted)), doc, rng, trials),
    }
    passed = all(d['telescoping'] and d['pairing_residual'] == 0.0 for d in details.values())
    return CheckResult('ports', passed, details)


def run_check(doc: ModelDoc, name: str, **options) -> CheckResult:
    suites = {
        'skew': check_skew,
        'lift-consistency': check_lift_consistency,
        'euler': check_euler,
        'ports': check_ports,
    }
    if name not in suites:
        raise ValueError(f"Unknown check '{name}' (expected one of {', '.join(CHECKS)})")
    status(f"🔍 Running {name} checks on '{doc.name}'")
    result = suites[name](doc, **options)
    status(f"{'✅' if result.passed else '❌'} {name}: {'passed' if result.passed else 'failed'}")
    return result


def port_summary(doc: ModelDoc) -> Dict[str, Any]:
    bundle = lift_model(doc)
    return {
        'version': REPORT_VERSION,
        'model': doc.name,
        'original': build_port_frame(structure_operator(bundle.system)).to_json(),
        'lifted': build_port_frame(structure_operator(bundle.lifted)).to_json(),
    }


def _symbolic_section(system: HamiltonianSystem) -> Dict[str, Any]:
    names = system.state_names
    gradient = system.gradient()
    out = {
        'states': list(names),
        'operator': system.J.to_json(),
        'operator_text': system.J.to_text(),
        'hamiltonian': system.density.density.to_text(names),
        'hamiltonian_latex': system.density.density.to_latex(names),
        'euler_derivatives': [g.to_text(names) for g in gradient],
        'euler_derivatives_latex': [g.to_latex(names) for g in gradient],
    }
    if system.is_dissipative:
        out['G'] = system.G.to_json()
        out['R'] = system.R.to_text()
    return out


def build_certificate(doc: ModelDoc, checks: Sequence[str] = CHECKS, numeric: bool = True) -> Dict[str, Any]:
    """Full JSON certificate: symbolic objects, lift, ports and check outcomes"""
    status(f"📝 Building certificate for '{doc.name}'")
    bundle = lift_model(doc)
    _, lift_summary = lift_document(doc)
    results: List[CheckResult] = []
    for name in checks:
        options = {'numeric': numeric} if name == 'lift-consistency' else {}
        results.append(run_check(doc, name, **options))
    return {
        'version': REPORT_VERSION,
        'generated_at': datetime.now().isoformat(timespec='seconds'),
        'model': doc.name,
        'source': print_model(doc),
        'domain': [str(doc.domain[0]), str(doc.domain[1])],
        'dissipative': doc.is_dissipative,
        'original': _symbolic_section(bundle.system),
        'lifted': {**_symbolic_section(bundle.lifted), 'lift_entries': lift_summary['lift_entries']},
        'lift': lift_summary,
        'ports': port_summary(doc),
        'checks': [r.to_dict() for r in results],
        'passed': all(r.passed for r in results),
    }


@dataclass
class SimulationResult:
    trajectory: Trajectory
    system: SemiDiscreteSystem
    balance: Dict[str, Any]


def simulate_model(doc: ModelDoc, nx: int, dt: float, t_end: float, bc: Optional[str] = None,
                   lifted: bool = False, stencil_order: int = 2, derivative_mode: Optional[str] = None,
                   record_every: int = 1, closure: Optional[str] = None) -> SimulationResult:
    """Discretize the model (or its lift) and integrate from the initial section"""
    bc = bc or doc.boundary
    a, b = doc.domain_floats()
    grid = Grid(a, b, nx, bc)
    state = initial_state(doc)
    x0 = _sample(state, grid)
    bundle = lift_model(doc) if lifted else None
    system = bundle.lifted if lifted else build_system(doc)
    sd = discretize(system, grid, stencil_order, derivative_mode, closure)
    if lifted:
        original_stencils = StencilSet(grid, stencil_order, derivative_mode)
        x0 = prolong_state(x0, bundle.lifted_model.spec, original_stencils)
    status(f"🧮 {system.name}: {nx} points, {bc} grid, {sd.stencils.mode} stencils, {sd.closure} closure")
    traj = integrate(sd, x0, dt, t_end, record_every=record_every)
    final = instantaneous_balance(sd, traj.final_state)
    energy = np.asarray(traj.energy)
    balance = {
        'model': system.name,
        'N': nx,
        'dt': dt,
        't_end': t_end,
        'bc': bc,
        'closure': sd.closure,
        'H_initial': float(energy[0]),
        'H_final': float(energy[-1]),
        'max_energy_increase': traj.max_energy_increase(),
        'final_balance': final.to_dict(),
        'max_abs_residual': max((abs(b.residual) for b in traj.balances), default=0.0),
    }
    if system.is_dissipative:
        balance['min_dissipation_density'] = float(np.min(sd.dissipation_density(traj.final_state)))
    return SimulationResult(traj, sd, balance)
