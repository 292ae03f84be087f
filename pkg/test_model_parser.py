# FILE: test_model_parser.py

import random
from fractions import Fraction

import pytest

from src.jetexpr import JetPolynomial, JetVar
from src.lift import lift_hamiltonian
from src.model_library import ModelLibrary, load_model
from src.model_parser import (DissipationDoc, ModelDoc, ModelSemanticError, ModelSyntaxError, build_system,
                              default_profile, doc_from_system, initial_state, parse_model, print_model)
from src.opalg import MatDiffOp, SymmetryClass, classify_symmetry, formal_adjoint

BUNDLED = ['allen_cahn', 'boussinesq', 'elastic_rod', 'kdv']

ROD_TEXT = """phs 1
# elastic rod
system rod
  domain = [0, 1]
  states = u, p
params
  k = 2
operator [[0, 1],
          [-1, 0]]
hamiltonian 1/2*p^2 + 1/2*k*u^2   # potential
  + 1/2*dz(u)^2
initial
  u = sin(2*pi*z)
"""


def model(operator='[[0, d], [d, 0]]', hamiltonian='1/2*u^2 + 1/2*v^2', states='u, v', extra=''):
    return (f"phs 1\nsystem m\n  domain = [0, 1]\n  states = {states}\n"
            f"operator {operator}\nhamiltonian {hamiltonian}\n{extra}")


def test_library_lists_bundled_models():
    library = ModelLibrary()
    assert library.names() == BUNDLED
    rows = {row['name']: row for row in library.summary()}
    assert rows['allen_cahn']['dissipative'] is True
    assert rows['kdv']['boundary'] == 'bounded'
    assert rows['boussinesq']['states'] == ['u', 'v']


@pytest.mark.parametrize('name', BUNDLED)
def test_bundled_models_parse_and_build(name):
    doc = load_model(name)
    system = build_system(doc)
    assert system.n == doc.n
    assert classify_symmetry(system.J) == SymmetryClass.SKEW_ADJOINT
    assert parse_model(print_model(doc)) == doc


def test_library_accepts_paths(tmp_path):
    path = tmp_path / 'rod.phs'
    path.write_text(ROD_TEXT)
    library = ModelLibrary(tmp_path)
    assert library.names() == ['rod']
    assert library.load(str(path)).name == 'rod'
    assert library.load('rod.phs') is library.load('rod')
    with pytest.raises(FileNotFoundError):
        library.load('no_such_model')


def test_parse_rod_with_continuations_and_comments():
    doc = parse_model(ROD_TEXT)
    assert doc.name == 'rod'
    assert doc.states == ('u', 'p')
    assert doc.operator == '[[0, 1], [-1, 0]]'
    assert doc.hamiltonian == '1/2*p^2 + 1/2*k*u^2 + 1/2*dz(u)^2'
    assert doc.params == (('k', Fraction(2)),)
    assert doc.boundary == 'periodic'
    assert doc.initial_map() == {'u': 'sin(2*pi*z)'}
    system = build_system(doc)
    assert system.gradient()[0] == JetPolynomial.var(1) * 2 - JetPolynomial.var(1, 2)


def test_states_default_to_operator_rows():
    doc = parse_model("phs 1\nsystem s\noperator [[0, d], [d, 0]]\nhamiltonian 1/2*x1^2 + x2^2\n")
    assert doc.states == ('x1', 'x2')
    assert doc.domain == (Fraction(0), Fraction(1))


def test_with_params():
    doc = parse_model(ROD_TEXT)
    assert doc.with_params(k=5).param_map() == {'k': Fraction(5)}
    with pytest.raises(ModelSemanticError) as err:
        doc.with_params(rhoA=2)
    assert err.value.kind == 'unknown_parameter'


def test_initial_state_uses_default_profile():
    doc = parse_model(ROD_TEXT)
    state = initial_state(doc)
    assert state.n == 2
    assert state.function(JetVar(1, 0))(0.25) == pytest.approx(1.0)
    assert 'exp(cos(2*pi*(z - 0)/1 + 1))/2' == default_profile(doc, 2)


@pytest.mark.parametrize('text,line,column', [
    ("system m\n", 1, 1),
    ("phs 2\nsystem m\n", 1, 5),
    ("phs 1\nsystem m\n  domain = [0, 1]\nfoo bar\n", 4, 1),
    ("phs 1\nsystem m\n  domain = 0, 1\noperator [[d]]\nhamiltonian x1^2\n", 3, 12),
    ("phs 1\nsystem m\n  states = x\n  colour = red\noperator [[d]]\nhamiltonian x^2\n", 4, 3),
    ("phs 1\nsystem m\nparams\n  k = abc\noperator [[d]]\nhamiltonian x1^2\n", 4, 7),
    ("phs 1\nsystem m\noperator [[d]]\n", 4, 1),
    ("phs 1\nsystem m\n  states = x\noperator [[d]]\nhamiltonian x^2 +\n", 5, 18),
])
def test_syntax_errors_carry_positions(text, line, column):
    with pytest.raises(ModelSyntaxError) as err:
        parse_model(text)
    assert (err.value.line, err.value.column) == (line, column)
    diagnostic = err.value.to_dict()
    assert diagnostic['kind'] == 'syntax_error'
    assert diagnostic['expected']


def test_duplicate_section():
    text = model(extra="hamiltonian 1/2*u^2\n")
    with pytest.raises(ModelSemanticError) as err:
        parse_model(text)
    assert err.value.kind == 'duplicate_section'
    assert err.value.line == 7


def test_operator_size_must_match_states():
    with pytest.raises(ModelSemanticError) as err:
        parse_model(model(states='x', hamiltonian='1/2*x^2'))
    assert err.value.kind == 'dimension_mismatch'
    assert (err.value.line, err.value.column) == (5, 10)


def test_non_skew_operator():
    with pytest.raises(ModelSemanticError) as err:
        parse_model(model(operator='[[d^2, 0], [0, 1]]'))
    assert err.value.kind == 'non_skew_operator'


def test_undeclared_state_and_unknown_parameter():
    with pytest.raises(ModelSemanticError) as err:
        parse_model(model(states='x1, x2', hamiltonian='1/2*x1^2 + x3^2'))
    assert err.value.kind == 'undeclared_state'
    assert (err.value.line, err.value.column) == (6, 24)

    with pytest.raises(ModelSemanticError) as err:
        parse_model(model(hamiltonian='1/2*u^2 + w*v^2'))
    assert err.value.kind == 'unknown_parameter'
    assert (err.value.line, err.value.column) == (6, 23)

    with pytest.raises(ModelSemanticError) as err:
        parse_model(model(extra="initial\n  q = sin(z)\n"))
    assert err.value.kind == 'undeclared_state'

    with pytest.raises(ModelSemanticError) as err:
        parse_model(model(extra="initial\n  u = sin(a*z)\n"))
    assert err.value.kind == 'unknown_parameter'


def test_dissipation_checks():
    base = "phs 1\nsystem ac\n  domain = [0, 8]\n  states = phi\noperator [[0]]\nhamiltonian 1/2*phi^2\n"
    doc = parse_model(base + "dissipation\n  G = [[1]]\n  R = 2 + z\n")
    assert doc.dissipation == DissipationDoc('[[1]]', '2 + z')
    assert build_system(doc).is_dissipative

    with pytest.raises(ModelSemanticError) as err:
        parse_model(base + "dissipation\n  G = [[1]]\n  R = 1 - z\n")
    assert err.value.kind == 'negative_resistance'
    assert err.value.line == 9

    with pytest.raises(ModelSemanticError) as err:
        parse_model(base + "dissipation\n  G = [[1], [d]]\n  R = 1\n")
    assert err.value.kind == 'dimension_mismatch'

    with pytest.raises(ModelSemanticError) as err:
        parse_model(base + "dissipation\n  G = [[1, d]]\n  R = 1\n")
    assert err.value.kind == 'dimension_mismatch'

    with pytest.raises(ModelSyntaxError):
        parse_model(base + "dissipation\n  G = [[1]]\n")


def test_validation_can_be_skipped():
    doc = parse_model(model(operator='[[d^2, 0], [0, 1]]'), validate=False)
    assert doc.operator == '[[d^2, 0], [0, 1]]'


def test_semantic_diagnostic_dict():
    with pytest.raises(ModelSemanticError) as err:
        parse_model(model(hamiltonian='1/2*u^2 + w*v^2'))
    diagnostic = err.value.to_dict()
    assert diagnostic == {'status': 'error', 'kind': 'unknown_parameter', 'message': str(err.value),
                          'line': 6, 'column': 23}


def random_doc(rng: random.Random) -> ModelDoc:
    states = tuple(rng.sample(['u', 'v', 'p', 'q', 'phi'], rng.randint(1, 3)))
    n = len(states)
    coeffs = {k: [[rng.randint(-2, 2) for _ in range(n)] for _ in range(n)] for k in range(3) if rng.random() < 0.7}
    A = MatDiffOp(n, n, coeffs)
    J = A - formal_adjoint(A)
    density = JetPolynomial.constant(Fraction(rng.randint(1, 5), rng.randint(1, 4)))
    for _ in range(rng.randint(1, 3)):
        density = density * JetPolynomial.var(rng.randint(1, n), rng.randint(0, 2)) + rng.randint(-3, 3)
    a = Fraction(rng.randint(-4, 0), rng.randint(1, 3))
    b = a + Fraction(rng.randint(1, 9), rng.randint(1, 3))
    params = tuple((f"c{i}", Fraction(rng.randint(-9, 9), rng.randint(1, 5))) for i in range(rng.randint(0, 3)))
    dissipation = None
    if rng.random() < 0.5:
        G = MatDiffOp(n, 1, {k: [[rng.randint(-2, 2)] for _ in range(n)] for k in range(2)})
        dissipation = DissipationDoc(G.to_text(), str(Fraction(rng.randint(1, 5), rng.randint(1, 3))))
    initial = tuple((s, f"sin({rng.randint(1, 4)}*z) + {rng.randint(0, 3)}") for s in states if rng.random() < 0.5)
    return ModelDoc(
        name=f"model_{rng.randint(0, 999)}",
        domain=(a, b),
        states=states,
        operator=J.to_text(),
        hamiltonian=density.to_text(states),
        params=params,
        dissipation=dissipation,
        initial=initial,
        boundary=rng.choice(['periodic', 'bounded']),
    )


def test_print_parse_identity_on_random_models():
    rng = random.Random(4242)
    for trial in range(100):
        doc = random_doc(rng)
        text = print_model(doc)
        assert parse_model(text) == doc, text
        assert print_model(parse_model(text)) == text


def test_doc_from_lifted_system_round_trips():
    system = build_system(load_model('boussinesq'))
    lifted = lift_hamiltonian(system).as_system()
    doc = doc_from_system(lifted, boundary='bounded')
    assert doc.states == ('u', 'v', 'u_z')
    assert parse_model(print_model(doc)) == doc
    rebuilt = build_system(doc)
    assert rebuilt.J == lifted.J
    assert rebuilt.density.density == lifted.density.density
