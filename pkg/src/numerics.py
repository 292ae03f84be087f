# FILE: src/numerics.py

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sps

from src.config import get_settings, status
from src.grid import Grid, StencilSet
from src.jetexpr import JetPolynomial, JetVar
from src.lift import HamiltonianSystem, LiftSpec
from src.opalg import MatDiffOp, apply, formal_adjoint
from src.ports import (PortFrame, PortSample, boundary_bracket, build_port_frame, energy_rate_density,
                       evaluate_ports, structure_operator, symbolic_traces)

RK4_STABILITY_LIMIT = 2.78
OPEN = 'open'
ZERO_TRACE = 'zero_trace'


class StabilityError(ValueError):
    """Time step violates the explicit stability bound"""


class IntegrationAborted(ValueError):
    """Integration stopped early; the partial trajectory is attached"""

    def __init__(self, message: str, trajectory: 'Trajectory'):
        super().__init__(message)
        self.trajectory = trajectory


class InconsistentInitialData(ValueError):
    """Lifted initial state is not the discrete prolongation of the original one"""


class ResistanceError(ValueError):
    """Resistive map has a negative eigenvalue on the grid"""


@dataclass
class BalanceReport:
    """
    Energy balance of one semi-discrete state.

    dH_dt is the quadrature of effort . rhs, so it describes the trajectory
    actually integrated; port_power follows the closure (zero for periodic
    and zero-trace grids, effort traces for open ones). The symbolic_* fields
    hold the chain-rule rate on discrete jets and close with the boundary
    bracket: symbolic_rate = trace_power - symbolic_dissipation + bracket.
    """

    dH_dt: float
    port_power: float
    dissipation: float = 0.0
    bracket: float = 0.0
    port_sample: Optional[PortSample] = None
    symbolic_rate: float = 0.0
    trace_power: float = 0.0
    symbolic_dissipation: float = 0.0

    @property
    def defect(self) -> float:
        return self.dH_dt - self.port_power

    @property
    def residual(self) -> float:
        """dH/dt - port power + dissipation of the discrete system"""
        return self.defect + self.dissipation

    @property
    def symbolic_defect(self) -> float:
        return self.symbolic_rate - self.trace_power

    @property
    def symbolic_residual(self) -> float:
        """Zero for the continuous system: dH/dt = port power - dissipation + bracket"""
        return self.symbolic_defect + self.symbolic_dissipation - self.bracket

    def to_dict(self) -> Dict[str, float]:
        return {
            'dH_dt': self.dH_dt,
            'port_power': self.port_power,
            'defect': self.defect,
            'dissipation': self.dissipation,
            'residual': self.residual,
            'symbolic_rate': self.symbolic_rate,
            'trace_power': self.trace_power,
            'bracket': self.bracket,
            'symbolic_residual': self.symbolic_residual,
        }


class SemiDiscreteSystem:
    """
    Method-of-lines form of x_t = (J - G R G*) dH/dx.

    States are arrays of shape (n, N). dz^k is the stencil operator of the
    chosen derivative mode; the variational derivative is the compiled
    symbolic Euler derivative evaluated on discrete jets.
    """

    def __init__(self, system: HamiltonianSystem, grid: Grid, stencil_order: int = 2,
                 derivative_mode: Optional[str] = None, closure: Optional[str] = None):
        self.system = system
        self.grid = grid
        self.stencils = StencilSet(grid, stencil_order, derivative_mode)
        self.closure = closure or (OPEN if grid.periodic else ZERO_TRACE)
        if self.closure not in (OPEN, ZERO_TRACE):
            raise ValueError(f"Unknown closure '{self.closure}'")
        self.n = system.n

        self._gradient = [g.compile() for g in system.gradient()]
        self._density = system.density.density.compile()
        self._weights = grid.weights()

        # fail early on grids too coarse for the jets the gradient needs
        orders = [v.deriv_order for g in system.gradient() for v in g.variables()]
        orders += [v.deriv_order for v in system.density.support]
        for k in sorted(set(orders)):
            self.stencils.derivative(k)
        self._balance: Optional['_BalanceProgram'] = None

        self.J_op = self._assemble(system.J)
        if self.closure == ZERO_TRACE and not grid.periodic:
            self.J_op = 0.5 * (self.J_op - self._weighted_adjoint(self.J_op, self.n, self.n))

        self.R_samples = None
        if system.is_dissipative:
            self.G_op = self._assemble(system.G)
            if grid.periodic:
                self.G_star_op = self._assemble(formal_adjoint(system.G))
            else:
                self.G_star_op = self._weighted_adjoint(self.G_op, self.n, system.d_g)
            self.R_samples = system.R.evaluate(grid.points)
            sym = 0.5 * (self.R_samples + np.transpose(self.R_samples, (0, 2, 1)))
            lowest = float(np.min(np.linalg.eigvalsh(sym)))
            if lowest < -get_settings().machine_tol:
                raise ResistanceError(f"Resistive map is indefinite on the grid (eigenvalue {lowest:.3e})")

    # assembly

    def _assemble(self, A: MatDiffOp) -> sps.csr_matrix:
        N = self.grid.N
        op = sps.csr_matrix((A.rows * N, A.cols * N))
        for k in A.coeffs:
            op = op + sps.kron(sps.csr_matrix(A.to_numpy(k)), self.stencils.derivative(k), format='csr')
        return op.tocsr()

    def _weighted_adjoint(self, op: sps.csr_matrix, out_blocks: int, in_blocks: int) -> sps.csr_matrix:
        """Adjoint W_in^-1 op^T W_out of op: R^(in_blocks N) -> R^(out_blocks N) under quadrature weights"""
        w_in = np.tile(self._weights, in_blocks)
        w_out = np.tile(self._weights, out_blocks)
        return (sps.diags(1.0 / w_in) @ op.T @ sps.diags(w_out)).tocsr()

    # evaluation

    def jets(self, x: np.ndarray) -> Callable[[JetVar], np.ndarray]:
        """Lazy lookup of D_k x_i with per-call caching"""
        x = np.asarray(x, dtype=float).reshape(self.n, self.grid.N)
        cache: Dict[JetVar, np.ndarray] = {}

        def lookup(v: JetVar) -> np.ndarray:
            if v not in cache:
                cache[v] = self.stencils.apply(v.deriv_order, x[v.state_index - 1])
            return cache[v]
        return lookup

    def boundary_jets(self, x: np.ndarray, end: str) -> Callable[[JetVar], float]:
        """u_{i,k} at z = a or z = b from one-sided trace stencils"""
        x = np.asarray(x, dtype=float).reshape(self.n, self.grid.N)

        def lookup(v: JetVar) -> float:
            idx_a, w_a, idx_b, w_b = self.stencils.trace_weights(v.deriv_order)
            idx, w = (idx_a, w_a) if end == 'a' else (idx_b, w_b)
            return float(np.dot(w, x[v.state_index - 1][idx]))
        return lookup

    def effort(self, x: np.ndarray) -> np.ndarray:
        lookup = self.jets(x)
        z = self.grid.points
        return np.vstack([g(lookup, z) for g in self._gradient])

    def rhs(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.n, self.grid.N)
        e = self.effort(x).ravel()
        out = self.J_op @ e
        if self.system.is_dissipative:
            F = -(self.G_star_op @ e).reshape(self.system.d_g, self.grid.N)
            phi = np.einsum('qij,jq->iq', self.R_samples, F)
            out = out + self.G_op @ phi.ravel()
        return out.reshape(self.n, self.grid.N)

    def hamiltonian(self, x: np.ndarray) -> float:
        if self.system.density.density.is_zero():
            return 0.0
        return self.grid.integrate(self._density(self.jets(x), self.grid.points))

    def dissipation_density(self, x: np.ndarray) -> np.ndarray:
        """phi^T F at the grid points (nonnegative for R >= 0)"""
        if not self.system.is_dissipative:
            return np.zeros(self.grid.N)
        e = self.effort(x).ravel()
        F = -(self.G_star_op @ e).reshape(self.system.d_g, self.grid.N)
        phi = np.einsum('qij,jq->iq', self.R_samples, F)
        return np.sum(phi * F, axis=0)

    def operator_matrix(self) -> sps.csr_matrix:
        """Linear part acting on the effort, J_op - G_op R G*_op"""
        if not self.system.is_dissipative:
            return self.J_op
        d = self.system.d_g
        R_op = sps.bmat([[sps.diags(self.R_samples[:, i, j]) for j in range(d)] for i in range(d)], format='csr')
        return (self.J_op - self.G_op @ R_op @ self.G_star_op).tocsr()


def discretize(system: HamiltonianSystem, grid: Grid, stencil_order: int = 2,
               derivative_mode: Optional[str] = None, closure: Optional[str] = None) -> SemiDiscreteSystem:
    return SemiDiscreteSystem(system, grid, stencil_order, derivative_mode, closure)


class _BalanceProgram:
    """Compiled polynomials for the symbolic energy balance of one system"""

    def __init__(self, system: HamiltonianSystem):
        self.rate = energy_rate_density(system).compile()
        self.bracket = boundary_bracket(system).compile()
        gradient = system.gradient()
        effort = list(gradient)
        self.dissipation = None
        if system.is_dissipative:
            F = [-f for f in apply(formal_adjoint(system.G), gradient)]
            phi = system.R.apply(F)
            effort.extend(phi)
            self.dissipation = sum((p * f for p, f in zip(phi, F)), JetPolynomial()).compile()
        self.frame: PortFrame = build_port_frame(structure_operator(system))
        traces = symbolic_traces(self.frame, effort) if not self.frame.is_empty else ()
        self.traces = [t.compile() for t in traces]


def _balance_program(sd: SemiDiscreteSystem) -> _BalanceProgram:
    if sd._balance is None:
        sd._balance = _BalanceProgram(sd.system)
    return sd._balance


def instantaneous_balance(sd: SemiDiscreteSystem, x: np.ndarray) -> BalanceReport:
    """
    Discrete balance: dH/dt = int e . rhs (quadrature), dissipation = int phi . F
    from the assembled operators, port power from effort traces on open bounded
    grids only. Periodic and zero-trace grids are closed, so there
    int e . rhs = -dissipation up to roundoff.

    The chain-rule rate, the trace power the continuous system would see and
    the boundary bracket are reported alongside.
    """
    program = _balance_program(sd)
    grid = sd.grid
    z = grid.points
    x = np.asarray(x, dtype=float).reshape(sd.n, grid.N)
    lookup = sd.jets(x)
    dH_dt = grid.integrate(np.sum(sd.effort(x) * sd.rhs(x), axis=0))
    dissipation = grid.integrate(sd.dissipation_density(x))
    symbolic_rate = grid.integrate(program.rate(lookup, z))
    symbolic_dissipation = 0.0
    if program.dissipation is not None:
        symbolic_dissipation = grid.integrate(program.dissipation(lookup, z))

    if grid.periodic:
        z_a = z_b = grid.a
        look_a = look_b = sd.boundary_jets(x, 'a')
    else:
        z_a, z_b = grid.a, grid.b
        look_a, look_b = sd.boundary_jets(x, 'a'), sd.boundary_jets(x, 'b')

    sample = None
    trace_power = 0.0
    if program.traces:
        tau_a = [float(t(look_a, z_a)) for t in program.traces]
        tau_b = [float(t(look_b, z_b)) for t in program.traces]
        sample = evaluate_ports(program.frame, tau_a, tau_b)
        trace_power = sample.power
    port_power = trace_power if sd.closure == OPEN and not grid.periodic else 0.0
    bracket = float(program.bracket(look_b, z_b)) - float(program.bracket(look_a, z_a))
    return BalanceReport(dH_dt, port_power, dissipation, bracket, sample,
                         symbolic_rate=symbolic_rate, trace_power=trace_power,
                         symbolic_dissipation=symbolic_dissipation)


def estimate_spectral_radius(sd: SemiDiscreteSystem, x: np.ndarray, iterations: int = 40,
                             seed: Optional[int] = None) -> float:
    """
    Power iteration on finite-difference Jacobian-vector products of the rhs.

    Single-step norm ratios alternate for rotation-like Jacobians (u -> p -> -K u),
    so the estimate is the geometric mean of an even number of trailing ratios.
    """
    rng = np.random.default_rng(get_settings().random_seed if seed is None else seed)
    x = np.asarray(x, dtype=float).reshape(sd.n, sd.grid.N)
    f0 = sd.rhs(x)
    v = rng.standard_normal(x.shape)
    v /= np.linalg.norm(v)
    scale = max(1.0, float(np.max(np.abs(x))))
    eps = 1e-7 * scale
    log_ratios: List[float] = []
    for _ in range(iterations):
        Jv = (sd.rhs(x + eps * v) - f0) / eps
        norm = float(np.linalg.norm(Jv))
        if norm == 0.0 or not np.isfinite(norm):
            break
        log_ratios.append(math.log(norm))
        v = Jv / norm
    if not log_ratios:
        return 0.0
    tail = log_ratios[len(log_ratios) // 2:]
    if len(tail) % 2 and len(tail) > 1:
        tail = tail[1:]
    return math.exp(sum(tail) / len(tail))


@dataclass
class Trajectory:
    grid: Grid
    state_names: Tuple[str, ...]
    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    energy: List[float] = field(default_factory=list)
    balances: List[BalanceReport] = field(default_factory=list)
    aborted: Optional[str] = None

    def record(self, t: float, x: np.ndarray, H: float, balance: Optional[BalanceReport]):
        self.times.append(t)
        self.states.append(np.array(x, copy=True))
        self.energy.append(H)
        if balance is not None:
            self.balances.append(balance)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def state_array(self) -> np.ndarray:
        return np.stack(self.states)

    def energy_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({'t': self.times, 'H': self.energy})
        if len(self.balances) == len(self.times):
            df['dH_dt'] = [b.dH_dt for b in self.balances]
            df['port_power'] = [b.port_power for b in self.balances]
            df['defect'] = [b.defect for b in self.balances]
            df['dissipation'] = [b.dissipation for b in self.balances]
            df['residual'] = [b.residual for b in self.balances]
            df['symbolic_rate'] = [b.symbolic_rate for b in self.balances]
            df['trace_power'] = [b.trace_power for b in self.balances]
        return df

    def to_frame(self) -> pd.DataFrame:
        """Long format: one row per (t, z) with state columns, H, port power, defect"""
        z = self.grid.points
        frames = []
        energy = self.energy_frame()
        for k, (t, x) in enumerate(zip(self.times, self.states)):
            data = {'t': np.full(z.size, t), 'z': z}
            for name, row in zip(self.state_names, x):
                data[name] = row
            for col in energy.columns[1:]:
                data[col] = np.full(z.size, energy[col].iloc[k])
            frames.append(pd.DataFrame(data))
        return pd.concat(frames, ignore_index=True)

    def ports_frame(self) -> pd.DataFrame:
        rows = []
        for t, b in zip(self.times, self.balances):
            row = {'t': t}
            if b.port_sample is not None:
                for i, f in enumerate(b.port_sample.f_boundary, start=1):
                    row[f'f{i}'] = f
                for i, e in enumerate(b.port_sample.e_boundary, start=1):
                    row[f'e{i}'] = e
            row['power'] = b.port_power
            row['trace_power'] = b.trace_power
            rows.append(row)
        return pd.DataFrame(rows)

    def max_energy_increase(self) -> float:
        if len(self.energy) < 2:
            return 0.0
        return float(np.max(np.diff(self.energy)))


def integrate(sd: SemiDiscreteSystem, x0: np.ndarray, dt: float, t_end: float, scheme: str = 'rk4',
              record_every: int = 1, monitor: bool = True, max_steps: Optional[int] = None,
              wall_clock_limit: Optional[float] = None, check_stability: bool = True) -> Trajectory:
    """
    Classical RK4 with a fixed step.

    Args:
        sd: semi-discrete system
        x0: initial state (n, N)
        dt: time step; dt * rho must not exceed the RK4 stability limit
        t_end: final time
        record_every: record H and balances every this many steps
        monitor: evaluate the energy balance at recorded steps

    Returns:
        Trajectory; raises IntegrationAborted on NaN/Inf or when a cap is hit
    """
    if scheme != 'rk4':
        raise ValueError(f"Unknown scheme '{scheme}' (only rk4 is available)")
    if dt <= 0 or t_end < 0:
        raise ValueError("dt must be positive and t_end nonnegative")
    settings = get_settings()
    max_steps = max_steps or settings.max_steps
    wall_clock_limit = wall_clock_limit or settings.wall_clock_limit

    x = np.asarray(x0, dtype=float).reshape(sd.n, sd.grid.N).copy()
    if check_stability:
        rho = estimate_spectral_radius(sd, x)
        bound = RK4_STABILITY_LIMIT * settings.cfl_safety
        if dt * rho > bound:
            raise StabilityError(
                f"dt = {dt:g} exceeds the RK4 bound: dt * rho = {dt * rho:.3f} > {bound:.2f} "
                f"(rho ~ {rho:.3e}); use dt <= {bound / rho:.3e}"
            )
        status(f"⏱️ Spectral radius ~ {rho:.3e}, dt * rho = {dt * rho:.3f}")

    steps = int(round(t_end / dt))
    if abs(steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end = {t_end} is not a multiple of dt = {dt}")

    traj = Trajectory(sd.grid, sd.system.state_names)
    traj.record(0.0, x, sd.hamiltonian(x), instantaneous_balance(sd, x) if monitor else None)
    started = time.monotonic()
    status(f"🚀 Integrating {sd.system.name}: {steps} steps of dt = {dt:g}")

    for step in range(1, steps + 1):
        k1 = sd.rhs(x)
        k2 = sd.rhs(x + 0.5 * dt * k1)
        k3 = sd.rhs(x + 0.5 * dt * k2)
        k4 = sd.rhs(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = step * dt

        if not np.all(np.isfinite(x)):
            traj.aborted = f"non-finite state at t = {t:g} (step {step})"
            raise IntegrationAborted(traj.aborted, traj)
        if step % record_every == 0 or step == steps:
            traj.record(t, x, sd.hamiltonian(x), instantaneous_balance(sd, x) if monitor else None)
        if step >= max_steps and step < steps:
            traj.aborted = f"step cap of {max_steps} reached at t = {t:g}"
            raise IntegrationAborted(traj.aborted, traj)
        if time.monotonic() - started > wall_clock_limit:
            traj.aborted = f"wall-clock limit of {wall_clock_limit:g} s reached at t = {t:g}"
            raise IntegrationAborted(traj.aborted, traj)

    status(f"✅ Reached t = {steps * dt:g}")
    return traj


def prolong_state(x: np.ndarray, spec: LiftSpec, stencils: StencilSet) -> np.ndarray:
    """Discrete prolongation xbar_k = D_{j_k} x_{i_k}"""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.vstack([stencils.apply(j, x[i - 1]) for i, j in spec.entries])


@dataclass
class ConsistencyReport:
    spec: LiftSpec
    grid_sizes: List[int]
    spacings: List[float]
    errors: List[List[float]]
    slopes: List[List[float]]
    tolerance: float

    @property
    def max_errors(self) -> List[float]:
        return [max(e, default=0.0) for e in self.errors]

    @property
    def status(self) -> str:
        if all(err <= self.tolerance for err in self.max_errors):
            return 'exact'
        return 'converging' if self.slopes else 'single_grid'

    def observed_order(self) -> float:
        """Smallest refinement slope over all entries, last pair of grids"""
        if not self.slopes:
            return float('nan')
        return min(self.slopes[-1])

    def to_dict(self) -> Dict:
        return {
            'entries': self.spec.to_json(),
            'grid_sizes': self.grid_sizes,
            'h': self.spacings,
            'sup_errors': self.errors,
            'slopes': self.slopes,
            'status': self.status,
        }


def consistency_check(original: Union[Trajectory, Sequence[Trajectory]],
                      lifted: Union[Trajectory, Sequence[Trajectory]], spec: LiftSpec,
                      stencils: Optional[Union[StencilSet, Sequence[StencilSet]]] = None,
                      initial_tol: float = 1e-12) -> ConsistencyReport:
    """
    Per-entry sup norm over recorded times of xbar_k - D_{j_k} x_{i_k}.
    Several trajectory pairs on refined grids yield refinement slopes
    log(e1 / e2) / log(h1 / h2).
    """
    originals = [original] if isinstance(original, Trajectory) else list(original)
    lifteds = [lifted] if isinstance(lifted, Trajectory) else list(lifted)
    if len(originals) != len(lifteds):
        raise ValueError("Need one lifted trajectory per original trajectory")
    if stencils is None:
        stencil_list = [StencilSet(t.grid) for t in originals]
    elif isinstance(stencils, StencilSet):
        stencil_list = [stencils]
    else:
        stencil_list = list(stencils)

    errors, sizes, spacings = [], [], []
    for orig, lift_traj, st in zip(originals, lifteds, stencil_list):
        if orig.grid != lift_traj.grid:
            raise InconsistentInitialData("Original and lifted trajectories live on different grids")
        if len(orig.times) != len(lift_traj.times) or not np.allclose(orig.times, lift_traj.times):
            raise InconsistentInitialData("Original and lifted trajectories are recorded at different times")
        x0_bar = prolong_state(orig.states[0], spec, st)
        scale = max(1.0, float(np.max(np.abs(x0_bar))))
        mismatch = float(np.max(np.abs(lift_traj.states[0] - x0_bar)))
        if mismatch > initial_tol * scale:
            raise InconsistentInitialData(
                f"Lifted initial state differs from the discrete prolongation by {mismatch:.3e}")
        per_entry = [0.0] * spec.l
        for x, xb in zip(orig.states, lift_traj.states):
            diff = np.abs(xb - prolong_state(x, spec, st))
            per_entry = [max(p, float(np.max(d))) for p, d in zip(per_entry, diff)]
        errors.append(per_entry)
        sizes.append(orig.grid.N)
        spacings.append(orig.grid.h)

    slopes = []
    for (e1, h1), (e2, h2) in zip(zip(errors, spacings), zip(errors[1:], spacings[1:])):
        row = []
        for a, b in zip(e1, e2):
            if a > 0 and b > 0:
                row.append(math.log(a / b) / math.log(h1 / h2))
            else:
                row.append(float('inf'))
        slopes.append(row)
    return ConsistencyReport(spec, sizes, spacings, errors, slopes, get_settings().machine_tol)
