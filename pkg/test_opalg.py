# FILE: test_opalg.py

import random
from fractions import Fraction

import numpy as np
import pytest

from src.expr_parser import parse_expression
from src.jetexpr import (JetExprError, JetPolynomial, partial_derivative, total_derivative_n,
                         variational_gradient)
from src.opalg import (DimensionError, MatDiffOp, SymmetryClass, SymmetryError, apply, classify_symmetry,
                       compose, formal_adjoint, require_skew)


def random_operator(rng: random.Random, rows: int, cols: int, max_order: int = 3) -> MatDiffOp:
    coeffs = {}
    for k in range(max_order + 1):
        if rng.random() < 0.6:
            coeffs[k] = [[Fraction(rng.randint(-3, 3), rng.randint(1, 2)) for _ in range(cols)] for _ in range(rows)]
    return MatDiffOp(rows, cols, coeffs)


def test_from_text_reads_coefficients():
    op = MatDiffOp.from_text('[[0, d], [d, 0]]')
    assert op.shape == (2, 2)
    assert op.order == 1
    assert op.to_json() == {'1': [['0', '1'], ['1', '0']]}

    op = MatDiffOp.from_text('[[1/3*d^3 - 2]]')
    assert op.to_json() == {'0': [['-2']], '3': [['1/3']]}

    op = MatDiffOp.from_text('[[k*d]]', params={'k': Fraction(5, 2)})
    assert op.coefficient(1) == ((Fraction(5, 2),),)


def test_from_text_rejects_state_dependence():
    with pytest.raises(JetExprError):
        MatDiffOp.from_text('[[x1*d]]')


def test_zero_coefficients_are_not_stored():
    op = MatDiffOp(1, 1, {0: [[0]], 2: [[1]]})
    assert set(op.coeffs) == {2}
    assert MatDiffOp.zero(2, 2).is_zero()
    assert MatDiffOp.zero(2, 2).order == 0


def test_text_round_trip():
    for text in ('[[0, d], [d, 0]]', '[[0, 1], [-1, 0]]', '[[d^3 - 1/2*d, 2], [-2, 0]]'):
        op = MatDiffOp.from_text(text)
        assert MatDiffOp.from_text(op.to_text()) == op


def test_compose_is_cauchy_product():
    assert compose(MatDiffOp.dz(), MatDiffOp.dz()) == MatDiffOp.dz(2)
    J = MatDiffOp.from_text('[[0, d], [d, 0]]')
    assert J @ J == MatDiffOp.diagonal([2, 2])
    assert MatDiffOp.dz(1, sign=-1) @ MatDiffOp.dz(2) == MatDiffOp.dz(3, sign=-1)


def test_compose_shape_mismatch():
    with pytest.raises(DimensionError):
        compose(MatDiffOp.identity(2), MatDiffOp.identity(3))
    with pytest.raises(DimensionError):
        MatDiffOp.identity(2) + MatDiffOp.identity(3)


def test_formal_adjoint_signs():
    assert formal_adjoint(MatDiffOp.dz()) == -MatDiffOp.dz()
    assert formal_adjoint(MatDiffOp.dz(2)) == MatDiffOp.dz(2)
    G = MatDiffOp.from_text('[[1], [d]]')
    assert formal_adjoint(G) == MatDiffOp.from_text('[[1, -d]]')


@pytest.mark.parametrize('text,expected', [
    ('[[0, d], [d, 0]]', SymmetryClass.SKEW_ADJOINT),
    ('[[0, 1], [-1, 0]]', SymmetryClass.SKEW_ADJOINT),
    ('[[d]]', SymmetryClass.SKEW_ADJOINT),
    ('[[0]]', SymmetryClass.SKEW_ADJOINT),
    ('[[d^2]]', SymmetryClass.SELF_ADJOINT),
    ('[[1, d], [-d, 1]]', SymmetryClass.SELF_ADJOINT),
    ('[[d, 1], [0, 0]]', SymmetryClass.NEITHER),
])
def test_classify_symmetry(text, expected):
    assert classify_symmetry(MatDiffOp.from_text(text)) == expected


def test_classify_requires_square():
    with pytest.raises(DimensionError):
        classify_symmetry(MatDiffOp.from_text('[[1, d]]'))
    with pytest.raises(SymmetryError):
        require_skew(MatDiffOp.from_text('[[d^2]]'))
    require_skew(MatDiffOp.from_text('[[0, d], [d, 0]]'))


def test_adjoint_algebra_on_random_operators():
    rng = random.Random(11)
    for _ in range(50):
        A = random_operator(rng, 2, 3)
        B = random_operator(rng, 3, 2)
        assert formal_adjoint(formal_adjoint(A)) == A
        assert formal_adjoint(A @ B) == formal_adjoint(B) @ formal_adjoint(A)
        C = random_operator(rng, 3, 3)
        assert classify_symmetry(C - formal_adjoint(C)) == SymmetryClass.SKEW_ADJOINT


def test_composition_is_associative():
    rng = random.Random(5)
    for _ in range(20):
        A, B, C = random_operator(rng, 2, 2), random_operator(rng, 2, 2), random_operator(rng, 2, 2)
        assert (A @ B) @ C == A @ (B @ C)


def test_apply_takes_total_derivatives():
    x = JetPolynomial.var(1, 0)
    out = apply(MatDiffOp.dz(), [x ** 2])
    assert out == (x * JetPolynomial.var(1, 1) * 2,)
    J = MatDiffOp.from_text('[[0, 1], [-1, 0]]')
    p = JetPolynomial.var(2, 0)
    assert apply(J, [x, p]) == (p, -x)
    with pytest.raises(DimensionError):
        apply(J, [x])


def test_apply_agrees_with_composition():
    rng = random.Random(3)
    e = [JetPolynomial.var(1, 0) ** 2, JetPolynomial.var(2, 1) * JetPolynomial.z()]
    for _ in range(10):
        A, B = random_operator(rng, 2, 2, 2), random_operator(rng, 2, 2, 2)
        assert apply(A @ B, e) == apply(A, apply(B, e))


def time_derivative(p: JetPolynomial, rhs) -> JetPolynomial:
    """d/dt of a jet expression along x_t = rhs"""
    out = JetPolynomial()
    for v in p.variables():
        out = out + partial_derivative(p, v) * total_derivative_n(rhs[v.state_index - 1], v.deriv_order)
    return out


def test_boussinesq_flow_gives_second_order_wave_equation():
    rng = random.Random(19)
    cases = [(Fraction(1, 3), Fraction(4, 9))]
    cases += [(Fraction(rng.randint(-5, 5), rng.randint(1, 4)), Fraction(rng.randint(-5, 5), rng.randint(1, 6)))
              for _ in range(20)]
    J = MatDiffOp.from_text('[[0, d], [d, 0]]')
    u = JetPolynomial.var(1, 0)
    for alpha, beta in cases:
        H = JetPolynomial.var(1, 1) ** 2 * (-alpha / 2) + u ** 3 * beta + JetPolynomial.var(2, 0) ** 2 * Fraction(1, 2)
        rhs = apply(J, variational_gradient(H, 2))
        u_tt = time_derivative(rhs[0], rhs)
        assert u_tt == JetPolynomial.var(1, 4) * alpha + total_derivative_n(u ** 2, 2) * (3 * beta)
    # u_tt = 1/3 u_zzzz + 4/3 (u^2)_zz for the bundled coefficients
    H = parse_expression('-1/6*dz(u)^2 + 4/9*u^3 + 1/2*v^2', state_names=['u', 'v'])
    rhs = apply(J, variational_gradient(H, 2))
    expected = JetPolynomial.var(1, 4) * Fraction(1, 3) + total_derivative_n(u ** 2, 2) * Fraction(4, 3)
    assert time_derivative(rhs[0], rhs) == expected


def test_block_assembly():
    G = MatDiffOp.from_text('[[1], [d]]')
    J = MatDiffOp.zero(2, 2)
    M = MatDiffOp.block([[J, G], [-formal_adjoint(G), MatDiffOp.zero(1, 1)]])
    assert M == MatDiffOp.from_text('[[0, 0, 1], [0, 0, d], [-1, d, 0]]')
    assert classify_symmetry(M) == SymmetryClass.SKEW_ADJOINT
    with pytest.raises(DimensionError):
        MatDiffOp.block([[J, MatDiffOp.zero(3, 1)]])


def test_select_and_transpose():
    op = MatDiffOp.from_text('[[0, d, 2], [3, 0, d^2]]')
    assert op.select([1], [0, 2]) == MatDiffOp.from_text('[[3, d^2]]')
    assert op.transpose().shape == (3, 2)
    assert op.transpose().transpose() == op


def test_to_numpy():
    op = MatDiffOp.from_text('[[0, d], [1/2*d, 0]]')
    np.testing.assert_array_equal(op.to_numpy(1), [[0.0, 1.0], [0.5, 0.0]])
    np.testing.assert_array_equal(op.to_numpy(4), np.zeros((2, 2)))
