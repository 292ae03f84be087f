# FILE: src/expr_parser.py

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Mapping, Optional, Sequence, Tuple

from src.jetexpr import JetExprError, JetPolynomial, total_derivative_n


class ExpressionSyntaxError(JetExprError):
    """Unexpected token; `position` is the 0-based offset into the parsed text"""

    def __init__(self, message: str, position: int, expected: Sequence[str] = ()):
        super().__init__(message)
        self.position = position
        self.expected = list(expected)


class UnknownNameError(JetExprError):
    """Identifier that is neither a state, a parameter, nor z"""

    def __init__(self, name: str, position: int):
        super().__init__(f"Unknown name '{name}'")
        self.name = name
        self.position = position


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    position: int


TOKEN_PATTERNS = [
    ('NUMBER', r'\d+(?:\.\d+)?(?:[eE][+-]?\d+)?'),
    ('NAME', r'[A-Za-z_][A-Za-z0-9_]*'),
    ('POW', r'\*\*|\^'),
    ('OP', r'[+\-*/]'),
    ('LPAREN', r'\('),
    ('RPAREN', r'\)'),
    ('LBRACKET', r'\['),
    ('RBRACKET', r'\]'),
    ('COMMA', r','),
    ('SPACE', r'\s+'),
]
_MASTER = re.compile('|'.join(f'(?P<{kind}>{pattern})' for kind, pattern in TOKEN_PATTERNS))
_DZ = re.compile(r'^dz(\d*)$')
_DEFAULT_STATE = re.compile(r'^x(\d+)$')


def tokenize(text: str) -> List[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _MASTER.match(text, pos)
        if not match:
            raise ExpressionSyntaxError(f"Unexpected character '{text[pos]}'", pos,
                                        ['number', 'name', 'operator', 'parenthesis'])
        if match.lastgroup != 'SPACE':
            tokens.append(Token(match.lastgroup, match.group(), pos))
        pos = match.end()
    tokens.append(Token('END', '', len(text)))
    return tokens


class _Parser:
    """Recursive descent over the token list; one instance per expression"""

    def __init__(self, text: str, state_names: Optional[Sequence[str]],
                 params: Optional[Mapping[str, Fraction]], operator_symbol: Optional[str]):
        self.text = text
        self.tokens = tokenize(text)
        self.index = 0
        self.state_names = list(state_names) if state_names is not None else None
        self.params = dict(params or {})
        self.operator_symbol = operator_symbol

    @property
    def current(self) -> Token:
        return self.tokens[self.index]

    def advance(self) -> Token:
        tok = self.tokens[self.index]
        self.index += 1
        return tok

    def expect(self, kind: str, label: str) -> Token:
        if self.current.kind != kind:
            raise ExpressionSyntaxError(
                f"Expected {label} but found '{self.current.text or 'end of input'}'",
                self.current.position, [label])
        return self.advance()

    def parse(self) -> JetPolynomial:
        result = self.expression()
        if self.current.kind != 'END':
            raise ExpressionSyntaxError(f"Unexpected '{self.current.text}'", self.current.position,
                                        ["'+'", "'-'", "'*'", "'/'", "'^'", 'end of expression'])
        return result

    def expression(self) -> JetPolynomial:
        result = self.term()
        while self.current.kind == 'OP' and self.current.text in '+-':
            op = self.advance().text
            rhs = self.term()
            result = result + rhs if op == '+' else result - rhs
        return result

    def term(self) -> JetPolynomial:
        result = self.unary()
        while self.current.kind == 'OP' and self.current.text in '*/':
            op = self.advance()
            rhs = self.unary()
            if op.text == '*':
                result = result * rhs
            else:
                if not rhs.is_constant():
                    raise ExpressionSyntaxError("Division is only allowed by constants", op.position,
                                                ['constant divisor'])
                if rhs.constant_value() == 0:
                    raise ExpressionSyntaxError("Division by zero", op.position, ['nonzero divisor'])
                result = result / rhs.constant_value()
        return result

    def unary(self) -> JetPolynomial:
        if self.current.kind == 'OP' and self.current.text in '+-':
            op = self.advance().text
            operand = self.unary()
            return -operand if op == '-' else operand
        return self.power()

    def power(self) -> JetPolynomial:
        base = self.atom()
        if self.current.kind == 'POW':
            self.advance()
            tok = self.expect('NUMBER', 'integer exponent')
            if not tok.text.isdigit():
                raise ExpressionSyntaxError(f"Exponent must be a non-negative integer, got '{tok.text}'",
                                            tok.position, ['integer exponent'])
            return base ** int(tok.text)
        return base

    def atom(self) -> JetPolynomial:
        tok = self.current
        if tok.kind == 'NUMBER':
            self.advance()
            return JetPolynomial.constant(Fraction(tok.text))
        if tok.kind == 'LPAREN':
            self.advance()
            inner = self.expression()
            self.expect('RPAREN', "')'")
            return inner
        if tok.kind == 'NAME':
            self.advance()
            dz = _DZ.match(tok.text)
            if dz and self.current.kind == 'LPAREN':
                order = int(dz.group(1)) if dz.group(1) else 1
                self.advance()
                inner = self.expression()
                self.expect('RPAREN', "')'")
                return total_derivative_n(inner, order)
            return self.name(tok)
        raise ExpressionSyntaxError(f"Unexpected '{tok.text or 'end of input'}'", tok.position,
                                    ['number', 'name', "'('"])

    def name(self, tok: Token) -> JetPolynomial:
        if self.operator_symbol is not None and tok.text == self.operator_symbol:
            return JetPolynomial.z()
        if self.operator_symbol is None and tok.text == 'z':
            return JetPolynomial.z()
        if self.state_names is not None:
            if tok.text in self.state_names:
                return JetPolynomial.var(self.state_names.index(tok.text) + 1)
        else:
            default = _DEFAULT_STATE.match(tok.text)
            if default and int(default.group(1)) >= 1:
                return JetPolynomial.var(int(default.group(1)))
        if tok.text in self.params:
            return JetPolynomial.constant(self.params[tok.text])
        raise UnknownNameError(tok.text, tok.position)


def parse_expression(text: str, state_names: Optional[Sequence[str]] = None,
                     params: Optional[Mapping[str, Fraction]] = None) -> JetPolynomial:
    """
    Parse jet-expression text such as `-1/6*dz(u)^2 + 4/9*u^3`

    Args:
        text: expression text
        state_names: names of x_1..x_n; defaults to x1, x2, ...
        params: constant bindings

    Returns:
        JetPolynomial
    """
    return _Parser(text, state_names, params, None).parse()


def parse_operator_entry(text: str, params: Optional[Mapping[str, Fraction]] = None,
                         symbol: str = 'd') -> JetPolynomial:
    """Polynomial in the derivative symbol; its powers sit in the z slot"""
    return _Parser(text, (), params, symbol).parse()


def split_matrix(text: str, offset: int = 0) -> List[List[Tuple[str, int]]]:
    """
    Split `[[a, b], [c, d]]` into entry texts with their offsets

    A bare entry without brackets is read as a 1x1 matrix.
    """
    stripped = text.strip()
    lead = offset + (len(text) - len(text.lstrip()))
    if not stripped.startswith('['):
        if not stripped:
            raise ExpressionSyntaxError("Empty matrix", lead, ["'['"])
        return [[(stripped, lead)]]
    rows: List[List[Tuple[str, int]]] = []
    depth = 0
    row: List[Tuple[str, int]] = []
    entry_start = None
    paren = 0
    closed = False
    for i, ch in enumerate(text):
        pos = offset + i
        if closed:
            if not ch.isspace():
                raise ExpressionSyntaxError(f"Unexpected '{ch}' after matrix", pos, ['end of matrix'])
            continue
        if ch == '[':
            depth += 1
            if depth > 2:
                raise ExpressionSyntaxError("Matrices nest at most two levels deep", pos, ["entry"])
            if depth == 2:
                row = []
                entry_start = i + 1
        elif ch == ']':
            if depth == 2:
                if paren:
                    raise ExpressionSyntaxError("Unbalanced parenthesis", pos, ["')'"])
                row.append(_entry(text, entry_start, i, offset))
                rows.append(row)
                entry_start = None
            elif depth == 1:
                closed = True
            else:
                raise ExpressionSyntaxError("Unbalanced ']'", pos, ["'['"])
            depth -= 1
        elif depth == 2:
            if ch == '(':
                paren += 1
            elif ch == ')':
                paren -= 1
            elif ch == ',' and paren == 0:
                row.append(_entry(text, entry_start, i, offset))
                entry_start = i + 1
        elif depth == 1:
            if not (ch.isspace() or ch == ','):
                raise ExpressionSyntaxError(f"Unexpected '{ch}' between matrix rows", pos, ["'['", "','", "']'"])
        elif not ch.isspace():
            raise ExpressionSyntaxError(f"Unexpected '{ch}'", pos, ["'['"])
    if depth != 0 or not closed:
        raise ExpressionSyntaxError("Unterminated matrix", offset + len(text), ["']'"])
    if not rows:
        raise ExpressionSyntaxError("Empty matrix", lead, ["'['"])
    width = len(rows[0])
    for r in rows:
        if len(r) != width:
            raise ExpressionSyntaxError(f"Ragged matrix: rows have {width} and {len(r)} entries",
                                        r[0][1], [f"{width} entries"])
    return rows


def _entry(text: str, start: int, end: int, offset: int) -> Tuple[str, int]:
    raw = text[start:end]
    lead = len(raw) - len(raw.lstrip())
    entry = raw.strip()
    if not entry:
        raise ExpressionSyntaxError("Empty matrix entry", offset + start, ['expression'])
    return entry, offset + start + lead


def parse_matrix(text: str, entry_parser, offset: int = 0) -> List[List[JetPolynomial]]:
    """Parse each entry of a matrix literal, re-basing error positions"""
    parsed = []
    for row in split_matrix(text, offset):
        out_row = []
        for entry, pos in row:
            try:
                out_row.append(entry_parser(entry))
            except ExpressionSyntaxError as e:
                raise ExpressionSyntaxError(str(e), pos + e.position, e.expected) from e
            except UnknownNameError as e:
                raise UnknownNameError(e.name, pos + e.position) from e
        parsed.append(out_row)
    return parsed


def format_operator_entry(poly: JetPolynomial, symbol: str = 'd') -> str:
    """Inverse of parse_operator_entry for polynomials in the z slot only"""
    text = poly.to_text()
    return re.sub(r'\bz\b', symbol, text)
