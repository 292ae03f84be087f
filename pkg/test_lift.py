# FILE: test_lift.py

import random
from fractions import Fraction

import numpy as np
import pytest

from src.jetexpr import DensityProfile, JetPolynomial
from src.lift import (HamiltonianSystem, LiftError, LiftSpec, ResistiveMap, check_dissipative_prolongation,
                      check_prolongation, coefficients_closed_form, composite_operator,
                      g_coefficients_closed_form, infer_lift_spec, lift_dissipative, lift_hamiltonian)
from src.opalg import DimensionError, MatDiffOp, SymmetryClass, classify_symmetry, formal_adjoint


def system(operator: str, density: str, names, G: str = None, R=None) -> HamiltonianSystem:
    return HamiltonianSystem(
        MatDiffOp.from_text(operator),
        DensityProfile.of(JetPolynomial.parse(density, names)),
        MatDiffOp.from_text(G) if G else None,
        ResistiveMap.scalar(R) if R is not None else None,
        state_names=tuple(names),
    )


@pytest.fixture
def boussinesq():
    return system('[[0, d], [d, 0]]', '-1/6*dz(u)^2 + 4/9*u^3 + 1/2*v^2', ['u', 'v'])


@pytest.fixture
def rod():
    return system('[[0, 1], [-1, 0]]', '1/2*p^2 + 1/2*u^2 + 1/2*dz(u)^2', ['u', 'p'])


@pytest.fixture
def allen_cahn():
    return system('[[0]]', '1/4*(phi^2 - 1)^2 + 1/2*dz(phi)^2', ['phi'], G='[[1]]', R=1)


def random_skew(rng: random.Random, n: int, max_order: int = 3) -> MatDiffOp:
    coeffs = {k: [[Fraction(rng.randint(-2, 2)) for _ in range(n)] for _ in range(n)]
              for k in range(max_order + 1) if rng.random() < 0.7}
    A = MatDiffOp(n, n, coeffs)
    return A - formal_adjoint(A)


def random_spec(rng: random.Random, n: int) -> LiftSpec:
    entries = {(i, 0) for i in range(1, n + 1)}
    for _ in range(rng.randint(0, 3)):
        entries.add((rng.randint(1, n), rng.randint(1, 3)))
    return LiftSpec(tuple(entries))


def random_density(rng: random.Random, spec: LiftSpec) -> JetPolynomial:
    density = JetPolynomial()
    for _ in range(3):
        term = JetPolynomial.constant(Fraction(rng.randint(1, 5), rng.randint(1, 3)))
        for _ in range(rng.randint(1, 3)):
            i, j = rng.choice(spec.entries)
            term = term * JetPolynomial.var(i, j)
        density = density + term
    return density


def test_lift_spec_ordering_and_names():
    spec = LiftSpec(((1, 1), (2, 0), (1, 0)))
    assert spec.entries == ((1, 0), (2, 0), (1, 1))
    assert spec.orders == (0, 0, 1)
    assert spec.states == (1, 2, 1)
    assert spec.lifted_names(['u', 'v']) == ('u', 'v', 'u_z')
    assert spec.D_plus() == MatDiffOp.diagonal([0, 0, 1])
    assert spec.D_minus() == MatDiffOp.from_text('[[1, 0, 0], [0, 1, 0], [0, 0, -d]]')


def test_lift_spec_rejects_duplicates_and_bad_entries():
    with pytest.raises(LiftError):
        LiftSpec(((1, 0), (1, 0)))
    with pytest.raises(LiftError):
        LiftSpec(((0, 1),))


def test_infer_lift_spec_covers_support(boussinesq):
    spec = infer_lift_spec(boussinesq.density, 2)
    assert spec.entries == ((1, 0), (2, 0), (1, 1))


def test_boussinesq_lift(boussinesq):
    lifted = lift_hamiltonian(boussinesq)
    assert lifted.Jbar == MatDiffOp.from_text('[[0, d, 0], [d, 0, -d^2], [0, d^2, 0]]')
    expected = JetPolynomial.parse('-1/6*x3^2 + 4/9*x1^3 + 1/2*x2^2')
    assert lifted.density_bar.density == expected
    assert lifted.density_bar.max_order == 0
    assert lifted.as_system().state_names == ('u', 'v', 'u_z')


def test_rod_lift(rod):
    lifted = lift_hamiltonian(rod)
    assert lifted.Jbar == MatDiffOp.from_text('[[0, 1, 0], [-1, 0, d], [0, d, 0]]')
    assert classify_symmetry(lifted.Jbar) == SymmetryClass.SKEW_ADJOINT


def test_lift_is_idempotent_on_derivative_free_density():
    s = system('[[0, 1], [-1, 0]]', '1/2*x1^2 + 1/2*x2^2', ['x1', 'x2'])
    lifted = lift_hamiltonian(s)
    assert lifted.spec.is_identity()
    assert lifted.Jbar == s.J


@pytest.mark.parametrize('name', ['boussinesq', 'rod'])
def test_prolongation_residuals_vanish(name, request):
    lifted = lift_hamiltonian(request.getfixturevalue(name))
    assert all(r.is_zero() for r in check_prolongation(lifted))


def test_closed_form_matches_composition(boussinesq, rod):
    for s in (boussinesq, rod):
        lifted = lift_hamiltonian(s)
        assert coefficients_closed_form(s, lifted.spec) == lifted.Jbar.coeffs


def test_closed_form_matches_composition_random():
    rng = random.Random(2024)
    for trial in range(120):
        n = rng.randint(1, 5)
        J = random_skew(rng, n)
        spec = random_spec(rng, n)
        s = HamiltonianSystem(J, DensityProfile.of(random_density(rng, spec)))
        lifted = lift_hamiltonian(s, spec)
        assert coefficients_closed_form(s, spec) == lifted.Jbar.coeffs, trial
        assert classify_symmetry(lifted.Jbar) == SymmetryClass.SKEW_ADJOINT, trial


def test_random_prolongation_residuals_vanish():
    rng = random.Random(99)
    for _ in range(20):
        n = rng.randint(1, 2)
        spec = random_spec(rng, n)
        s = HamiltonianSystem(random_skew(rng, n, 2), DensityProfile.of(random_density(rng, spec)))
        assert all(r.is_zero() for r in check_prolongation(lift_hamiltonian(s, spec)))


def test_row_sign_variant_does_not_reproduce_composition(boussinesq):
    lifted = lift_hamiltonian(boussinesq)
    row = coefficients_closed_form(boussinesq, lifted.spec, sign_convention='row')
    assert row != lifted.Jbar.coeffs
    assert row[2][1][2] == 1
    assert lifted.Jbar.coeffs[2][1][2] == -1
    with pytest.raises(ValueError):
        coefficients_closed_form(boussinesq, lifted.spec, sign_convention='diagonal')


def test_lift_rejects_non_skew_operator():
    s = system('[[d^2]]', '1/2*dz(x1)^2', ['x1'])
    with pytest.raises(LiftError):
        lift_hamiltonian(s)


def test_lift_rejects_spec_missing_density_variables(boussinesq):
    with pytest.raises(LiftError):
        lift_hamiltonian(boussinesq, LiftSpec(((1, 0), (2, 0))))
    with pytest.raises(LiftError):
        lift_hamiltonian(boussinesq, LiftSpec(((1, 0), (2, 0), (1, 1), (3, 0))))


def test_system_validation():
    with pytest.raises(DimensionError):
        system('[[0, d]]', '1/2*x1^2', ['x1'])
    with pytest.raises(DimensionError):
        system('[[d]]', '1/2*x2^2', ['x1', 'x2'])
    with pytest.raises(LiftError):
        HamiltonianSystem(MatDiffOp.from_text('[[0]]'), DensityProfile.of(JetPolynomial.var(1) ** 2),
                          G=MatDiffOp.from_text('[[1]]'))
    with pytest.raises(DimensionError):
        system('[[0]]', '1/2*x1^2', ['x1'], G='[[1], [d]]', R=1)


def test_allen_cahn_dissipative_lift(allen_cahn):
    dl = lift_dissipative(allen_cahn)
    assert dl.Jbar.is_zero()
    assert dl.Gbar == MatDiffOp.from_text('[[1], [d]]')
    assert dl.composite == MatDiffOp.from_text('[[0, 0, 1], [0, 0, d], [-1, d, 0]]')
    assert dl.m_hat == 1
    assert classify_symmetry(dl.composite) == SymmetryClass.SKEW_ADJOINT
    assert all(r.is_zero() for r in check_dissipative_prolongation(dl))


def test_dissipative_lift_requires_dissipation(rod):
    with pytest.raises(LiftError):
        lift_dissipative(rod)
    with pytest.raises(LiftError):
        g_coefficients_closed_form(rod, infer_lift_spec(rod.density, 2))


def test_dissipative_closed_forms_random():
    rng = random.Random(17)
    for trial in range(100):
        n = rng.randint(1, 5)
        d_g = rng.randint(1, 3)
        spec = random_spec(rng, n)
        G = MatDiffOp(n, d_g, {k: [[Fraction(rng.randint(-2, 2)) for _ in range(d_g)] for _ in range(n)]
                               for k in range(3) if rng.random() < 0.7})
        R = ResistiveMap(tuple(tuple(JetPolynomial.constant(int(i == j)) for j in range(d_g))
                               for i in range(d_g)))
        s = HamiltonianSystem(random_skew(rng, n, 3), DensityProfile.of(random_density(rng, spec)), G, R)
        dl = lift_dissipative(s, spec)
        assert g_coefficients_closed_form(s, spec) == dl.Gbar.coeffs, trial
        assert composite_operator(dl) == dl.composite, trial
        assert all(r.is_zero() for r in check_dissipative_prolongation(dl)), trial


def test_resistive_map():
    R = ResistiveMap.from_text('[[2, z], [z, 2]]')
    samples = R.evaluate(np.array([0.0, 1.0]))
    assert samples.shape == (2, 2, 2)
    np.testing.assert_allclose(samples[1], [[2.0, 1.0], [1.0, 2.0]])
    assert R.min_eigenvalue(np.linspace(0, 1, 11)) == pytest.approx(1.0)
    assert not R.is_constant()
    with pytest.raises(LiftError):
        ResistiveMap.scalar(JetPolynomial.var(1))
    with pytest.raises(DimensionError):
        ResistiveMap.scalar(1).apply([JetPolynomial.var(1), JetPolynomial.var(2)])
