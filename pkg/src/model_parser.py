# FILE: src/model_parser.py

import re
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import sympy

from src.config import get_settings
from src.expr_parser import ExpressionSyntaxError, UnknownNameError, parse_expression
from src.jetexpr import JetExprError, ManufacturedState
from src.lift import HamiltonianSystem, LiftError, ResistiveMap
from src.opalg import DimensionError, MatDiffOp, SymmetryClass, classify_symmetry

FORMAT_VERSION = 1
SECTIONS = ('system', 'params', 'operator', 'hamiltonian', 'dissipation', 'initial')
SYSTEM_KEYS = ('domain', 'states', 'boundary')
DISSIPATION_KEYS = ('G', 'R')
BOUNDARY_KINDS = ('periodic', 'bounded')

SEMANTIC_KINDS = (
    'non_skew_operator',
    'undeclared_state',
    'dimension_mismatch',
    'negative_resistance',
    'unknown_parameter',
    'duplicate_section',
)

_IDENT = re.compile(r'^[A-Za-z_][A-Za-z0-9_]*$')
_KEY_VALUE = re.compile(r'^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$')
_DOMAIN = re.compile(r'^\[\s*([^,\]]+?)\s*,\s*([^,\]]+?)\s*\]$')
_RESERVED = re.compile(r'^(z|d|dz\d*|pi|E)$')
_DEFAULT_STATE = re.compile(r'^x\d+$')


class ModelError(ValueError):
    """Base class of model file diagnostics"""

    kind = 'model_error'

    def to_dict(self) -> Dict:
        return {'status': 'error', 'kind': self.kind, 'message': str(self)}


class ModelSyntaxError(ModelError):
    """Text does not follow the model grammar; line and column are 1-based"""

    kind = 'syntax_error'

    def __init__(self, message: str, line: int, column: int, expected: Sequence[str] = ()):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
        self.expected = list(expected)

    def to_dict(self) -> Dict:
        out = super().to_dict()
        out.update({'line': self.line, 'column': self.column, 'expected': self.expected})
        return out


class ModelSemanticError(ModelError):
    """Well-formed text describing an invalid system"""

    def __init__(self, kind: str, message: str, line: Optional[int] = None, column: Optional[int] = None):
        if kind not in SEMANTIC_KINDS:
            raise ValueError(f"Unknown semantic error kind '{kind}'")
        super().__init__(message if line is None else f"line {line}, column {column}: {message}")
        self.kind = kind
        self.line = line
        self.column = column

    def to_dict(self) -> Dict:
        out = super().to_dict()
        if self.line is not None:
            out.update({'line': self.line, 'column': self.column})
        return out


@dataclass(frozen=True)
class DissipationDoc:
    G: str
    R: str


@dataclass(frozen=True)
class ModelDoc:
    """
    Source-level description of a (dissipative) Hamiltonian system.

    Operator, density and resistive-map fields hold expression text; they
    are only turned into algebra by `build_system`. Parameters keep their
    declaration order so that printing is stable.
    """

    name: str
    domain: Tuple[Fraction, Fraction]
    states: Tuple[str, ...]
    operator: str
    hamiltonian: str
    params: Tuple[Tuple[str, Fraction], ...] = ()
    dissipation: Optional[DissipationDoc] = None
    initial: Tuple[Tuple[str, str], ...] = ()
    boundary: str = 'periodic'

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def is_dissipative(self) -> bool:
        return self.dissipation is not None

    def param_map(self) -> Dict[str, Fraction]:
        return dict(self.params)

    def initial_map(self) -> Dict[str, str]:
        return dict(self.initial)

    def domain_floats(self) -> Tuple[float, float]:
        return float(self.domain[0]), float(self.domain[1])

    def with_params(self, **overrides) -> 'ModelDoc':
        """Copy with some parameter values replaced (unknown names are rejected)"""
        known = self.param_map()
        for key in overrides:
            if key not in known:
                raise ModelSemanticError('unknown_parameter', f"Model '{self.name}' has no parameter '{key}'")
        params = tuple((k, Fraction(overrides.get(k, v))) for k, v in self.params)
        return replace(self, params=params)


# locations of field texts for diagnostics: field -> [(line, column, text)]
Pieces = List[Tuple[int, int, str]]


def _join(pieces: Pieces) -> str:
    return ' '.join(text for _, _, text in pieces)


def _locate(pieces: Optional[Pieces], position: int) -> Tuple[Optional[int], Optional[int]]:
    if not pieces:
        return None, None
    offset = 0
    for line, column, text in pieces:
        if position <= offset + len(text):
            return line, column + position - offset
        offset += len(text) + 1
    line, column, text = pieces[-1]
    return line, column + len(text)


def _parse_fraction(text: str, line: int, column: int) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise ModelSyntaxError(f"'{text.strip()}' is not a rational number", line, column,
                               ['integer', 'p/q', 'decimal']) from None


def _strip_comment(raw: str) -> str:
    pos = raw.find('#')
    return (raw if pos < 0 else raw[:pos]).rstrip()


def parse_model(text: str, validate: bool = True) -> ModelDoc:
    """
    Parse model text into a ModelDoc.

    Grammar (comments start with '#'):

        phs 1
        system <name>
          domain = [a, b]
          states = u, v
          boundary = periodic | bounded
        params
          <name> = <rational>
        operator <matrix in d>
        hamiltonian <expression>
        dissipation
          G = <matrix in d>
          R = <expression in z>
        initial
          <state> = <expression in z>

    Sections start in column 1; their bodies are indented. Operator and
    hamiltonian values may continue on indented lines.

    Raises:
        ModelSyntaxError: position and expected tokens
        ModelSemanticError: the described system is invalid (with validate=True)
    """
    lines = text.splitlines()
    header_seen = False
    current: Optional[str] = None
    seen: Dict[str, int] = {}
    system_name: Optional[str] = None
    system_fields: Dict[str, Tuple[int, int, str]] = {}
    params: List[Tuple[str, Fraction]] = []
    dissipation: Dict[str, Pieces] = {}
    initial: List[Tuple[str, str]] = []
    locations: Dict[str, Pieces] = {}

    for lineno, raw in enumerate(lines, start=1):
        body = _strip_comment(raw)
        if not body.strip():
            continue
        indent = len(body) - len(body.lstrip())
        content = body.strip()
        column = indent + 1

        if not header_seen:
            parts = content.split()
            if indent or parts[0] != 'phs':
                raise ModelSyntaxError("Model files start with the header 'phs 1'", lineno, column, ["'phs 1'"])
            if len(parts) != 2 or parts[1] != str(FORMAT_VERSION):
                raise ModelSyntaxError(f"Unsupported format version '{' '.join(parts[1:])}'", lineno,
                                       column + 4, [str(FORMAT_VERSION)])
            header_seen = True
            continue

        if indent == 0:
            keyword, _, rest = content.partition(' ')
            if keyword not in SECTIONS:
                raise ModelSyntaxError(f"Unknown section '{keyword}'", lineno, 1, list(SECTIONS))
            if keyword in seen:
                raise ModelSemanticError('duplicate_section',
                                         f"Section '{keyword}' already declared on line {seen[keyword]}",
                                         lineno, 1)
            seen[keyword] = lineno
            current = keyword
            rest_col = len(keyword) + 1 + (len(rest) - len(rest.lstrip())) + 1
            rest = rest.strip()
            if keyword == 'system':
                if not _IDENT.match(rest):
                    raise ModelSyntaxError("Expected a system name", lineno, rest_col, ['identifier'])
                system_name = rest
            elif keyword in ('operator', 'hamiltonian'):
                locations[keyword] = [(lineno, rest_col, rest)] if rest else []
            elif rest:
                raise ModelSyntaxError(f"Section '{keyword}' takes no inline value", lineno, rest_col,
                                       ['end of line'])
            continue

        if current is None:
            raise ModelSyntaxError("Indented line outside of a section", lineno, column, list(SECTIONS))

        if current in ('operator', 'hamiltonian'):
            locations[current].append((lineno, column, content))
            continue

        match = _KEY_VALUE.match(content)
        if not match:
            raise ModelSyntaxError("Expected 'name = value'", lineno, column, ["'='"])
        key, value = match.group(1), match.group(2).strip()
        value_col = column + match.start(2)
        if not value:
            raise ModelSyntaxError(f"Missing value for '{key}'", lineno, value_col, ['value'])

        if current == 'system':
            if key not in SYSTEM_KEYS:
                raise ModelSyntaxError(f"Unknown system key '{key}'", lineno, column, list(SYSTEM_KEYS))
            system_fields[key] = (lineno, value_col, value)
        elif current == 'params':
            if key in dict(params):
                raise ModelSyntaxError(f"Parameter '{key}' declared twice", lineno, column, ['new name'])
            if _RESERVED.match(key):
                raise ModelSyntaxError(f"'{key}' is a reserved name", lineno, column, ['identifier'])
            params.append((key, _parse_fraction(value, lineno, value_col)))
        elif current == 'dissipation':
            if key not in DISSIPATION_KEYS:
                raise ModelSyntaxError(f"Unknown dissipation key '{key}'", lineno, column, list(DISSIPATION_KEYS))
            dissipation[key] = [(lineno, value_col, value)]
        elif current == 'initial':
            if key in dict(initial):
                raise ModelSyntaxError(f"Initial value of '{key}' given twice", lineno, column, ['new state'])
            initial.append((key, value))
            locations[f'initial:{key}'] = [(lineno, value_col, value)]

    end_line = len(lines) + 1
    if not header_seen:
        raise ModelSyntaxError("Empty model file", 1, 1, ["'phs 1'"])
    for required in ('system', 'operator', 'hamiltonian'):
        if required not in seen:
            raise ModelSyntaxError(f"Missing section '{required}'", end_line, 1, [required])
    for key in ('operator', 'hamiltonian'):
        if not locations[key]:
            raise ModelSyntaxError(f"Section '{key}' is empty", seen[key], len(key) + 2, ['expression'])
    if 'dissipation' in seen:
        for key in DISSIPATION_KEYS:
            if key not in dissipation:
                raise ModelSyntaxError(f"Dissipation section needs '{key}'", seen['dissipation'], 1, [key])
            locations[key] = dissipation[key]

    domain = (Fraction(0), Fraction(1))
    if 'domain' in system_fields:
        line, col, value = system_fields['domain']
        match = _DOMAIN.match(value)
        if not match:
            raise ModelSyntaxError("Expected '[a, b]'", line, col, ["'[a, b]'"])
        domain = (_parse_fraction(match.group(1), line, col), _parse_fraction(match.group(2), line, col))
        if not domain[1] > domain[0]:
            raise ModelSyntaxError(f"Empty domain [{domain[0]}, {domain[1]}]", line, col, ['a < b'])

    boundary = 'periodic'
    if 'boundary' in system_fields:
        line, col, boundary = system_fields['boundary']
        if boundary not in BOUNDARY_KINDS:
            raise ModelSyntaxError(f"Unknown boundary kind '{boundary}'", line, col, list(BOUNDARY_KINDS))

    states: Tuple[str, ...] = ()
    if 'states' in system_fields:
        line, col, value = system_fields['states']
        states = tuple(s.strip() for s in value.split(','))
        for s in states:
            if not _IDENT.match(s) or _RESERVED.match(s):
                raise ModelSyntaxError(f"Invalid state name '{s}'", line, col, ['identifier'])
        if len(set(states)) != len(states):
            raise ModelSyntaxError("State names must be distinct", line, col, ['distinct names'])
    clash = [p for p, _ in params if p in states]
    if clash:
        raise ModelSyntaxError(f"Parameter '{clash[0]}' shadows a state", seen['params'], 1, ['new name'])

    doc = ModelDoc(
        name=system_name,
        domain=domain,
        states=states,
        operator=_join(locations['operator']),
        hamiltonian=_join(locations['hamiltonian']),
        params=tuple(params),
        dissipation=DissipationDoc(_join(locations['G']), _join(locations['R'])) if 'dissipation' in seen else None,
        initial=tuple(initial),
        boundary=boundary,
    )
    if not doc.states:
        # states default to x1..xn, n read off the operator
        doc = replace(doc, states=tuple(f"x{i}" for i in range(1, _operator_rows(doc, locations) + 1)))
    if validate:
        _build(doc, locations)
    return doc


def _operator_rows(doc: ModelDoc, locations: Optional[Mapping[str, Pieces]]) -> int:
    try:
        return MatDiffOp.from_text(doc.operator, doc.param_map()).rows
    except (ExpressionSyntaxError, UnknownNameError, JetExprError) as e:
        raise _convert(e, 'operator', locations) from e


def _convert(error: Exception, field_name: str, locations: Optional[Mapping[str, Pieces]]) -> ModelError:
    pieces = (locations or {}).get(field_name)
    if isinstance(error, ExpressionSyntaxError):
        line, column = _locate(pieces, error.position)
        if line is None:
            line, column = 0, error.position + 1
        return ModelSyntaxError(f"{field_name}: {error}", line, column, error.expected)
    if isinstance(error, UnknownNameError):
        line, column = _locate(pieces, error.position)
        looks_like_state = _DEFAULT_STATE.match(error.name) and field_name != 'operator'
        kind = 'undeclared_state' if looks_like_state else 'unknown_parameter'
        what = 'state' if looks_like_state else 'parameter'
        return ModelSemanticError(kind, f"{field_name}: undeclared {what} '{error.name}'", line, column)
    line, column = _locate(pieces, 0)
    return ModelSemanticError('dimension_mismatch', f"{field_name}: {error}", line, column)


def _at(locations: Optional[Mapping[str, Pieces]], field_name: str) -> Tuple[Optional[int], Optional[int]]:
    return _locate((locations or {}).get(field_name), 0)


def _build(doc: ModelDoc, locations: Optional[Mapping[str, Pieces]] = None) -> HamiltonianSystem:
    params = doc.param_map()

    try:
        J = MatDiffOp.from_text(doc.operator, params)
    except (ExpressionSyntaxError, UnknownNameError, JetExprError) as e:
        raise _convert(e, 'operator', locations) from e
    if J.rows != J.cols or J.rows != doc.n:
        raise ModelSemanticError(
            'dimension_mismatch',
            f"operator is {J.rows}x{J.cols} but {doc.n} state(s) are declared ({', '.join(doc.states)})",
            *_at(locations, 'operator'))
    if classify_symmetry(J) != SymmetryClass.SKEW_ADJOINT:
        raise ModelSemanticError('non_skew_operator', f"operator {J.to_text()} is not formally skew-adjoint",
                                 *_at(locations, 'operator'))

    try:
        density = parse_expression(doc.hamiltonian, doc.states, params)
    except (ExpressionSyntaxError, UnknownNameError, JetExprError) as e:
        raise _convert(e, 'hamiltonian', locations) from e

    G = R = None
    if doc.dissipation is not None:
        try:
            G = MatDiffOp.from_text(doc.dissipation.G, params)
        except (ExpressionSyntaxError, UnknownNameError, JetExprError) as e:
            raise _convert(e, 'G', locations) from e
        try:
            R = ResistiveMap.from_text(doc.dissipation.R, params)
        except (ExpressionSyntaxError, UnknownNameError) as e:
            raise _convert(e, 'R', locations) from e
        except (JetExprError, LiftError, DimensionError) as e:
            raise ModelSemanticError('dimension_mismatch', f"R: {e}", *_at(locations, 'R')) from e
        if G.rows != doc.n:
            raise ModelSemanticError('dimension_mismatch', f"G must have {doc.n} rows, got {G.rows}",
                                     *_at(locations, 'G'))
        if R.size != G.cols:
            raise ModelSemanticError('dimension_mismatch',
                                     f"R must be {G.cols}x{G.cols} to match the columns of G, got {R.size}x{R.size}",
                                     *_at(locations, 'R'))
        a, b = doc.domain_floats()
        lowest = R.min_eigenvalue(np.linspace(a, b, 201))
        if lowest < -get_settings().machine_tol:
            raise ModelSemanticError('negative_resistance',
                                     f"R has a negative eigenvalue {lowest:.6g} on [{a:g}, {b:g}]",
                                     *_at(locations, 'R'))

    for state, expr in doc.initial:
        if state not in doc.states:
            raise ModelSemanticError('undeclared_state', f"initial value for undeclared state '{state}'",
                                     *_at(locations, f'initial:{state}'))
        _initial_expr(doc, expr, locations, state)

    try:
        return HamiltonianSystem(J, density, G, R, doc.name, doc.states, doc.domain_floats())
    except (DimensionError, LiftError) as e:
        raise ModelSemanticError('dimension_mismatch', str(e)) from e


def _initial_expr(doc: ModelDoc, text: str, locations: Optional[Mapping[str, Pieces]] = None,
                  state: str = '') -> sympy.Expr:
    z = sympy.Symbol('z')
    names = {k: sympy.Rational(v.numerator, v.denominator) for k, v in doc.params}
    names['z'] = z
    try:
        expr = sympy.sympify(text, locals=names)
    except (sympy.SympifyError, SyntaxError, TypeError) as e:
        line, column = _at(locations, f'initial:{state}')
        raise ModelSyntaxError(f"initial value of '{state}' is not an expression in z: {e}",
                               line or 0, column or 1, ['expression in z']) from e
    unknown = sorted(str(s) for s in expr.free_symbols if s != z)
    if unknown:
        raise ModelSemanticError('unknown_parameter', f"initial value of '{state}' uses unknown name '{unknown[0]}'",
                                 *_at(locations, f'initial:{state}'))
    return expr


def build_system(doc: ModelDoc) -> HamiltonianSystem:
    """Assemble and validate the algebraic system described by a ModelDoc"""
    return _build(doc)


def default_profile(doc: ModelDoc, index: int) -> str:
    """Smooth periodic profile on the model domain, shifted per state"""
    a, b = doc.domain
    length = b - a
    return f"exp(cos(2*pi*(z - {a})/{length} + {index - 1}))/2"


def initial_state(doc: ModelDoc) -> ManufacturedState:
    """Initial data of the `initial` section, the default profile for states without one"""
    given = doc.initial_map()
    exprs = []
    for i, name in enumerate(doc.states, start=1):
        exprs.append(_initial_expr(doc, given.get(name, default_profile(doc, i)), state=name))
    return ManufacturedState(exprs)


def print_model(doc: ModelDoc) -> str:
    """Canonical text; parse_model(print_model(doc)) == doc"""
    out = [f"phs {FORMAT_VERSION}", f"system {doc.name}",
           f"  domain = [{doc.domain[0]}, {doc.domain[1]}]",
           f"  states = {', '.join(doc.states)}",
           f"  boundary = {doc.boundary}"]
    if doc.params:
        out.append("params")
        out.extend(f"  {k} = {v}" for k, v in doc.params)
    out.append(f"operator {doc.operator}")
    out.append(f"hamiltonian {doc.hamiltonian}")
    if doc.dissipation is not None:
        out.extend(["dissipation", f"  G = {doc.dissipation.G}", f"  R = {doc.dissipation.R}"])
    if doc.initial:
        out.append("initial")
        out.extend(f"  {k} = {v}" for k, v in doc.initial)
    return '\n'.join(out) + '\n'


def doc_from_system(system: HamiltonianSystem, boundary: str = 'periodic',
                    initial: Sequence[Tuple[str, str]] = ()) -> ModelDoc:
    """Model text of an assembled system, e.g. a lifted one; parameters are already substituted"""
    a, b = system.domain
    dissipation = None
    if system.is_dissipative:
        dissipation = DissipationDoc(system.G.to_text(), system.R.to_text())
    return ModelDoc(
        name=system.name,
        domain=(Fraction(str(a)), Fraction(str(b))),
        states=tuple(system.state_names),
        operator=system.J.to_text(),
        hamiltonian=system.density.density.to_text(system.state_names),
        dissipation=dissipation,
        initial=tuple(initial),
        boundary=boundary,
    )
