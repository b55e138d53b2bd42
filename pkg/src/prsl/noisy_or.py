"""Multicategorical noisy-or gates.

P(R = 1 | L = l) = 1 - prod_j q[j][l_j], with one inhibition probability per
(label, category) pair.
"""
from __future__ import annotations

import itertools
from typing import Mapping, Sequence

import numpy as np

from . import formula as fm
from .errors import EngineInfeasibleError, NotADisjunctionError
from .model import LabelSpec, NoisyOrRule

#: largest scope state space :func:`decompose_binary` will tabulate
DECOMPOSE_GUARD = 10**6
#: largest number of auxiliary indicator bits the brute-force sum may use
AUX_BITS_GUARD = 20


def rule_prob_noisy_or(rule: NoisyOrRule, assignment: Mapping[str, str], labels: Sequence[LabelSpec]) -> float:
    """P(R = 1 | assignment). Labels outside ``rule.q`` contribute a factor 1."""
    specs = {s.name: s for s in labels}
    prod = 1.0
    for label, row in rule.q.items():
        if label not in assignment:
            if all(x == 1.0 for x in row):
                continue
            raise KeyError(f"assignment has no value for scope label {label!r}")
        prod *= row[specs[label].index(assignment[label])]
    return 1.0 - prod


def _literals(f, negated=False):
    """Flatten ``f`` into (label, category, positive) literals of one disjunction."""
    if isinstance(f, fm.Atom):
        return [(f.label, f.category, not negated)]
    if isinstance(f, fm.Not):
        return _literals(f.operand, not negated)
    if isinstance(f, fm.Implies):
        return _literals(fm.Or(fm.Not(f.left), f.right), negated)
    if isinstance(f, fm.Or) and not negated:
        return _literals(f.left) + _literals(f.right)
    if isinstance(f, fm.And) and negated:
        # De Morgan: not (a and b) == not a or not b
        return _literals(f.left, True) + _literals(f.right, True)
    raise NotADisjunctionError(f"not a disjunction of literals: {fm.to_string(f)}")


def noisy_or_from_disjunction(f: fm.Formula, labels: Sequence[LabelSpec]) -> NoisyOrRule:
    """Crisp noisy-or whose CPT is the indicator of the clause ``f``.

    Every category satisfying some literal gets q = 0, all others q = 1.
    Several literals on one label are merged (their satisfying sets are
    united), which keeps the gate exact.
    """
    specs = {s.name: s for s in labels}
    q = {}
    for label, category, positive in _literals(f):
        spec = specs[label]
        row = list(q.get(label, [1.0] * spec.size))
        for m, cat in enumerate(spec.categories):
            if (cat == category) == positive:
                row[m] = 0.0
        q[label] = row
    return NoisyOrRule(q, crisp=True)


def decompose_binary(rule: NoisyOrRule, labels: Sequence[LabelSpec]) -> np.ndarray:
    """P(R = 1 | l) over the rule's labels, via binary indicator variables.

    Each label L_j is split into indicators L_jm with P(L_jm = 1 | L_j = a)
    equal to 1 iff a = m; the indicators feed an ordinary binary noisy-or
    with P(R = 0 | bits) = prod q_jm ** bit_jm, and the indicators are then
    summed out by brute force over all bit vectors. The table axes follow
    the order of ``rule.q``. Intended as a test oracle only.
    """
    specs = {s.name: s for s in labels}
    names = list(rule.q)
    sizes = [specs[n].size for n in names]
    n_states = int(np.prod(sizes)) if sizes else 1
    if n_states > DECOMPOSE_GUARD:
        raise EngineInfeasibleError(f"rule scope has {n_states} assignments (> {DECOMPOSE_GUARD})")
    n_bits = sum(sizes)
    if n_bits > AUX_BITS_GUARD:
        raise EngineInfeasibleError(f"{n_bits} indicator variables exceed the brute-force limit")

    q = np.array([x for n in names for x in rule.q[n]], dtype=float)
    bits = ((np.arange(2**n_bits)[:, None] >> np.arange(n_bits)) & 1).astype(bool)
    p_off = np.prod(np.where(bits, q, 1.0), axis=1)  # P(R = 0 | bits)

    table = np.empty(n_states)
    offsets = np.cumsum([0] + sizes[:-1]) if sizes else []
    for flat, combo in enumerate(itertools.product(*[range(s) for s in sizes])):
        target = np.zeros(n_bits, dtype=bool)
        for off, m in zip(offsets, combo):
            target[off + m] = True
        # P(bits | l) is 1 for the single consistent bit vector, 0 otherwise
        weight = np.all(bits == target, axis=1)
        table[flat] = 1.0 - np.sum(p_off * weight)
    return table.reshape(sizes) if sizes else table.reshape(())


def noisy_or_table(rule: NoisyOrRule, labels: Sequence[LabelSpec]) -> np.ndarray:
    """Direct evaluation of P(R = 1 | l), same layout as :func:`decompose_binary`."""
    specs = {s.name: s for s in labels}
    prod = np.ones(())
    for name in rule.q:
        prod = np.multiply.outer(prod, np.asarray(rule.row(name, specs[name].size)))
    return 1.0 - prod
