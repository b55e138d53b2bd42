"""Exact posterior queries by enumerating the joint label space.

Weights are accumulated in log space: for every assignment l,

    log w(l) = sum_j log P(C_j = l_j | x_j) + sum_k log P(R_k = r_k | l)

and normalized with a log-sum-exp. Clamped labels contribute a length-1 axis,
so only unclamped labels count towards the state-space guard.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Mapping, Optional, Tuple

import numpy as np

from . import formula as fm
from .errors import ContradictionError, EngineInfeasibleError
from .model import FormulaRule, Model, NoisyOrRule, Observation, label_priors

#: maximum number of unclamped joint states the exact engine enumerates
STATE_GUARD = 10**6


@dataclass(frozen=True)
class EvidenceSpec:
    """Conditioning set of a query.

    ``rule_states`` overrides the default evidence R_k = 1 for individual
    rules; rules listed in ``excluded_rules`` are summed out (equivalently
    removed from the network). ``clamped_labels`` is hard label evidence.
    """

    rule_states: Dict[int, int] = field(default_factory=dict)
    clamped_labels: Dict[str, str] = field(default_factory=dict)
    excluded_rules: FrozenSet[int] = frozenset()

    def state(self, k: int) -> Optional[int]:
        if k in self.excluded_rules:
            return None
        return self.rule_states.get(k, 1)


@dataclass
class QueryResult:
    marginals: Optional[Dict[str, np.ndarray]] = None
    mpe: Optional[Tuple[Dict[str, str], float]] = None
    converged: bool = True
    iterations: int = 0


@dataclass
class JointPosterior:
    """Normalized posterior table P(L = l | evidence, x).

    ``table`` has one axis per model label; a clamped label's axis has length
    1 and holds its clamped category.
    """

    model: Model
    table: np.ndarray
    axis_categories: Tuple[Tuple[int, ...], ...]
    log_evidence: float

    def prob(self, assignment: Mapping[str, str]) -> float:
        idx = []
        for spec, cats in zip(self.model.labels, self.axis_categories):
            m = spec.index(assignment[spec.name])
            if m not in cats:
                return 0.0
            idx.append(cats.index(m))
        return float(self.table[tuple(idx)])

    def rows(self):
        """Iterate ``(assignment, probability)`` in lexicographic index order."""
        for flat in range(self.table.size):
            idx = np.unravel_index(flat, self.table.shape)
            yield self._assignment(idx), float(self.table[idx])

    def _assignment(self, idx):
        return {
            spec.name: spec.categories[cats[i]]
            for spec, cats, i in zip(self.model.labels, self.axis_categories, idx)
        }

    def marginals(self) -> Dict[str, np.ndarray]:
        out = {}
        nd = self.table.ndim
        for axis, (spec, cats) in enumerate(zip(self.model.labels, self.axis_categories)):
            other = tuple(a for a in range(nd) if a != axis)
            reduced = self.table.sum(axis=other) if other else self.table
            probs = np.zeros(spec.size)
            probs[list(cats)] = reduced
            out[spec.name] = probs / probs.sum()
        return out

    def argmax(self) -> Tuple[Dict[str, str], float]:
        # np.argmax returns the first maximum in C order, i.e. the
        # lexicographically smallest category-index vector among ties
        flat = int(np.argmax(self.table))
        idx = np.unravel_index(flat, self.table.shape)
        return self._assignment(idx), float(self.table[idx])


def _rule_log_tables(rule, model):
    """log P(R=1 | l) and log P(R=0 | l) broadcastable over the label grid."""
    nd = len(model.labels)
    with np.errstate(divide="ignore"):
        if isinstance(rule, NoisyOrRule):
            p_off = np.ones([1] * nd)
            for name, row in rule.q.items():
                if all(x == 1.0 for x in row):
                    continue
                j = model.label_index(name)
                shape = [1] * nd
                shape[j] = len(row)
                p_off = p_off * np.asarray(row, dtype=float).reshape(shape)
            return np.log1p(-p_off), np.log(p_off)
        table_axes = {
            spec.name: (j, spec.categories, nd) for j, spec in enumerate(model.labels)
        }
        truth = fm.truth_table(rule.expr, table_axes)
        p1 = np.where(truth, rule.p, 1.0 - rule.p)
        return np.log(p1), np.log1p(-p1)


class ExactEngine:
    """Per-observation cache of the log prior and rule tables.

    Queries with different evidence reuse the cached tables, which is what
    makes the per-rule gradient queries of the learner cheap.
    """

    def __init__(self, model: Model, obs: Observation, guard: int = STATE_GUARD):
        self.model = model
        self.obs = obs
        self.guard = guard
        nd = len(model.labels)
        self._log_priors = []
        with np.errstate(divide="ignore"):
            for j, probs in enumerate(label_priors(model, obs)):
                shape = [1] * nd
                shape[j] = probs.size
                self._log_priors.append(np.log(probs).reshape(shape))
        self._rule_tables = [_rule_log_tables(r, model) for r in model.rules]

    def _slices(self, clamps):
        index = []
        cats = []
        free = 1
        for spec in self.model.labels:
            if spec.name in clamps:
                m = spec.index(clamps[spec.name])
                index.append(slice(m, m + 1))
                cats.append((m,))
            else:
                index.append(slice(None))
                cats.append(tuple(range(spec.size)))
                free *= spec.size
        if free > self.guard:
            raise EngineInfeasibleError(
                f"exact engine infeasible: {free} joint states exceed the guard of "
                f"{self.guard}; use the loopy engine"
            )
        return tuple(index), tuple(cats)

    def log_weights(self, ev: EvidenceSpec = None):
        """Unnormalized log weights over the (clamp-restricted) label grid."""
        ev = ev or EvidenceSpec()
        for k in ev.rule_states:
            if not 0 <= k < len(self.model.rules):
                raise IndexError(f"rule index {k} out of range")
        index, cats = self._slices(ev.clamped_labels)
        shape = [len(c) for c in cats]
        total = np.zeros(shape)
        for lp in self._log_priors:
            total = total + _restrict(lp, index)
        for k, (log_on, log_off) in enumerate(self._rule_tables):
            state = ev.state(k)
            if state is None:
                continue
            total = total + _restrict(log_on if state == 1 else log_off, index)
        return np.broadcast_to(total, shape), cats

    def query(self, ev: EvidenceSpec = None) -> JointPosterior:
        logw, cats = self.log_weights(ev)
        top = np.max(logw)
        if not np.isfinite(top):
            raise ContradictionError("evidence has probability zero (contradictory rules or clamps)")
        w = np.exp(logw - top)
        total = w.sum()
        return JointPosterior(self.model, w / total, cats, float(top + math.log(total)))

    def log_evidence(self, ev: EvidenceSpec = None) -> float:
        """log of the unnormalized evidence mass; -inf when impossible."""
        logw, _ = self.log_weights(ev)
        top = np.max(logw)
        if not np.isfinite(top):
            return -math.inf
        return float(top + math.log(np.exp(logw - top).sum()))


def _restrict(arr, index):
    # broadcast dims (size 1) must not be sliced past their length
    idx = tuple(slice(None) if arr.shape[a] == 1 else s for a, s in enumerate(index))
    return arr[idx]


def joint_posterior(model: Model, obs: Observation, ev: EvidenceSpec = None) -> JointPosterior:
    return ExactEngine(model, obs).query(ev)


def marginal_query_exact(model: Model, obs: Observation, ev: EvidenceSpec = None) -> QueryResult:
    return QueryResult(marginals=joint_posterior(model, obs, ev).marginals())


def mpe_query_exact(model: Model, obs: Observation, ev: EvidenceSpec = None) -> QueryResult:
    return QueryResult(mpe=joint_posterior(model, obs, ev).argmax())


def joint_loglik_exact(model: Model, obs: Observation, truth: Mapping[str, str], ev: EvidenceSpec = None) -> float:
    """log P(L' = truth | R = 1, x) for a full or partial assignment.

    Returns ``-math.inf`` when the truth is impossible under the model.
    """
    engine = ExactEngine(model, obs)
    ev = ev or EvidenceSpec()
    base = engine.log_evidence(ev)
    if base == -math.inf:
        raise ContradictionError("evidence has probability zero (contradictory rules or clamps)")
    clamped = EvidenceSpec(ev.rule_states, {**ev.clamped_labels, **truth}, ev.excluded_rules)
    return engine.log_evidence(clamped) - base
