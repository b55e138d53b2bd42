"""Propositional rule language: parsing, evaluation and formula-rule CPTs.

Grammar (loosest binding first)::

    iff     := implies (('<->' | '↔') implies)*
    implies := or (('->' | '→') implies)?          # right-associative
    or      := and (('|' | '∨') and)*
    and     := unary (('&' | '∧') unary)*
    unary   := ('!' | '¬') unary | '(' iff ')' | atom
    atom    := NAME '=' NAME | NAME

A bare ``NAME`` atom is a category name that must be unique across all labels.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import AmbiguousAtomError, FormulaSyntaxError, UnresolvedAtomError


@dataclass(frozen=True)
class Atom:
    label: str
    category: str


@dataclass(frozen=True)
class Not:
    operand: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Iff:
    left: "Formula"
    right: "Formula"


Formula = Union[Atom, Not, And, Or, Implies, Iff]

_BINARY = (And, Or, Implies, Iff)

# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<iff><->|↔)
  | (?P<implies>->|→)
  | (?P<not>!|¬)
  | (?P<and>&|∧)
  | (?P<or>\||∨)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<eq>=)
  | (?P<name>[\w.]+)
    """,
    re.VERBOSE,
)

_SYMBOL = {
    "iff": "'<->'",
    "implies": "'->'",
    "not": "'!'",
    "and": "'&'",
    "or": "'|'",
    "lparen": "'('",
    "rparen": "')'",
    "eq": "'='",
    "name": "a name",
    "end": "end of input",
}


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None or match.end() == pos:
            raise FormulaSyntaxError("unexpected character", text, pos)
        kind = match.lastgroup
        if kind != "ws":
            tokens.append((kind, match.group(), pos))
        pos = match.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, resolver):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.resolve = resolver

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind):
        tok = self.tokens[self.i]
        if tok[0] != kind:
            found = "end of input" if tok[0] == "end" else repr(tok[1])
            raise FormulaSyntaxError(f"unexpected {found}", self.text, tok[2], _SYMBOL[kind])
        self.i += 1
        return tok

    def parse(self):
        node = self.iff()
        self.take("end")
        return node

    def iff(self):
        node = self.implies()
        while self.peek()[0] == "iff":
            self.i += 1
            node = Iff(node, self.implies())
        return node

    def implies(self):
        node = self.disjunction()
        if self.peek()[0] == "implies":
            self.i += 1
            node = Implies(node, self.implies())
        return node

    def disjunction(self):
        node = self.conjunction()
        while self.peek()[0] == "or":
            self.i += 1
            node = Or(node, self.conjunction())
        return node

    def conjunction(self):
        node = self.unary()
        while self.peek()[0] == "and":
            self.i += 1
            node = And(node, self.unary())
        return node

    def unary(self):
        kind, _, pos = self.peek()
        if kind == "not":
            self.i += 1
            return Not(self.unary())
        if kind == "lparen":
            self.i += 1
            node = self.iff()
            self.take("rparen")
            return node
        if kind == "name":
            return self.atom()
        found = "end of input" if kind == "end" else repr(self.peek()[1])
        raise FormulaSyntaxError(f"unexpected {found}", self.text, pos, "'!', '(' or a name")

    def atom(self):
        _, first, pos = self.take("name")
        if self.peek()[0] == "eq":
            self.i += 1
            _, second, _ = self.take("name")
            return self.resolve(first, second, pos)
        return self.resolve(None, first, pos)


def _make_resolver(labels):
    by_name = {spec.name: spec for spec in labels}
    owners = {}
    for spec in labels:
        for cat in spec.categories:
            owners.setdefault(cat, []).append(spec.name)

    def resolve(label, category, pos):
        if label is not None:
            spec = by_name.get(label)
            if spec is None:
                raise UnresolvedAtomError(f"unknown label {label!r} at position {pos}")
            if category not in spec.categories:
                raise UnresolvedAtomError(
                    f"label {label!r} has no category {category!r} (position {pos})"
                )
            return Atom(label, category)
        found = owners.get(category, [])
        if not found:
            raise UnresolvedAtomError(f"no label has a category {category!r} (position {pos})")
        if len(found) > 1:
            raise AmbiguousAtomError(
                f"category {category!r} is ambiguous between labels {found}; "
                f"write it as Label={category} (position {pos})"
            )
        return Atom(found[0], category)

    return resolve


def parse_formula(text: str, labels: Sequence) -> Formula:
    """Parse ``text`` into a formula over the given label specifications.

    Parameters
    ----------
    text : str
        Formula source, e.g. ``"(h & s) -> o"`` or ``"L1=w <-> L2=g"``.
    labels : sequence of LabelSpec
        Used to resolve atoms. Bare category names must be unambiguous.

    Raises
    ------
    FormulaSyntaxError
        Malformed input; carries the offending position and expected token.
    UnresolvedAtomError, AmbiguousAtomError
        Atoms that cannot be mapped to exactly one ``(label, category)``.
    """
    if not labels:
        raise ValueError("at least one label is required to resolve atoms")
    return _Parser(text, _make_resolver(labels)).parse()


# ---------------------------------------------------------------------------
# printing

_PREC = {Iff: 1, Implies: 2, Or: 3, And: 4, Not: 5, Atom: 6}
_OPS = {Iff: "<->", Implies: "->", Or: "|", And: "&"}


def to_string(f: Formula) -> str:
    """Render ``f`` with qualified atoms and the minimal parentheses needed
    for it to parse back to the same tree."""
    if isinstance(f, Atom):
        return f"{f.label}={f.category}"
    if isinstance(f, Not):
        inner = to_string(f.operand)
        if _PREC[type(f.operand)] < _PREC[Not]:
            inner = f"({inner})"
        return "!" + inner
    prec = _PREC[type(f)]
    left, right = to_string(f.left), to_string(f.right)
    lp, rp = _PREC[type(f.left)], _PREC[type(f.right)]
    if isinstance(f, Implies):
        # right-associative
        wrap_left, wrap_right = lp <= prec, rp < prec
    else:
        wrap_left, wrap_right = lp < prec, rp <= prec
    if wrap_left:
        left = f"({left})"
    if wrap_right:
        right = f"({right})"
    return f"{left} {_OPS[type(f)]} {right}"


def atoms(f: Formula) -> list:
    """All atoms of ``f`` in left-to-right order (with repetitions)."""
    if isinstance(f, Atom):
        return [f]
    if isinstance(f, Not):
        return atoms(f.operand)
    return atoms(f.left) + atoms(f.right)


def scope(f: Formula) -> list:
    """Distinct label names used by ``f``, in order of first appearance."""
    seen = []
    for a in atoms(f):
        if a.label not in seen:
            seen.append(a.label)
    return seen


# ---------------------------------------------------------------------------
# semantics


def _evaluate(f, atom_value):
    if isinstance(f, Atom):
        return atom_value(f)
    if isinstance(f, Not):
        return np.logical_not(_evaluate(f.operand, atom_value))
    a = _evaluate(f.left, atom_value)
    b = _evaluate(f.right, atom_value)
    if isinstance(f, And):
        return np.logical_and(a, b)
    if isinstance(f, Or):
        return np.logical_or(a, b)
    if isinstance(f, Implies):
        return np.logical_or(np.logical_not(a), b)
    if isinstance(f, Iff):
        return np.equal(a, b)
    raise TypeError(f"not a formula node: {f!r}")


def eval_formula(f: Formula, assignment: Mapping[str, str]) -> bool:
    """Truth value of ``f`` under ``assignment`` (label name -> category name)."""

    def value(atom):
        try:
            return assignment[atom.label] == atom.category
        except KeyError:
            raise KeyError(f"assignment has no value for label {atom.label!r}") from None

    return bool(_evaluate(f, value))


def truth_table(f: Formula, axes: Mapping[str, tuple]) -> np.ndarray:
    """Vectorized evaluation of ``f`` over a grid of assignments.

    ``axes`` maps each label in the formula's scope to ``(axis, categories,
    ndim)``: the grid axis of that label, the category names laid out along
    that axis, and the total number of grid dimensions. The result broadcasts
    against the grid.
    """

    def value(atom):
        axis, cats, ndim = axes[atom.label]
        shape = [1] * ndim
        shape[axis] = len(cats)
        return np.asarray([c == atom.category for c in cats]).reshape(shape)

    return np.asarray(_evaluate(f, value), dtype=bool)


def rule_prob_formula(rule, assignment: Mapping[str, str]) -> float:
    """P(R = 1 | assignment) for a formula rule: ``p`` if satisfied, else ``1 - p``."""
    return rule.p if eval_formula(rule.expr, assignment) else 1.0 - rule.p
