"""Loopy belief propagation on the bipartite label/rule factor graph.

Variables are the unclamped labels with the calibrated classifier output as
unary potential; each rule becomes one factor with its evidence state
absorbed. Noisy-or factors send sum-product messages through the product
form, so a sweep costs O(J0) per factor and O(J * J0 * K) overall;
max-product messages of R = 1 gates and all formula factors enumerate the
factor scope.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional

import numpy as np

from . import formula as fm
from . import kernels
from .errors import ContradictionError, EngineInfeasibleError, NumericError
from .exact import EvidenceSpec, QueryResult
from .messages import ENUMERATION_GUARD, factor_message_enumerate, noisy_or_message, noisy_or_tensor
from .model import Model, NoisyOrRule, Observation, label_priors

#: default maximum scope of a tabulated formula factor
J0_MAX = 5

NOISY_OR = 0
TABLE = 1


@dataclass(frozen=True)
class BPOptions:
    damping: float = 0.5
    tol: float = 1e-6
    max_iters: int = 200

    def __post_init__(self):
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if not self.tol >= 0.0:
            raise ValueError("tol must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class FactorGraph:
    """Flat array representation shared by both kernels.

    Edge ``e`` connects factor ``f`` (edges ``fac_ptr[f]:fac_ptr[f+1]``) with
    variable ``edge_var[e]``. Rows of ``psi`` and ``edge_q`` are padded to
    the widest label (padding is ignored by the kernels).
    """

    model: Model
    clamps: Dict[str, str]
    var_labels: List[int]
    factor_rules: List[int]
    card: np.ndarray
    psi: np.ndarray
    fac_kind: np.ndarray
    fac_evid: np.ndarray
    fac_const: np.ndarray
    fac_ptr: np.ndarray
    edge_var: np.ndarray
    edge_q: np.ndarray
    fac_tab_ptr: np.ndarray
    tables: np.ndarray
    var_ptr: np.ndarray = field(init=False)
    var_edges: np.ndarray = field(init=False)

    def __post_init__(self):
        order = np.argsort(self.edge_var, kind="stable")
        counts = np.bincount(self.edge_var, minlength=len(self.var_labels))
        self.var_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.intp)
        self.var_edges = order.astype(np.intp)

    @property
    def n_factors(self) -> int:
        return len(self.factor_rules)

    def degrees(self) -> List[int]:
        return [int(self.fac_ptr[f + 1] - self.fac_ptr[f]) for f in range(self.n_factors)]

    def factor_scope(self, f: int) -> List[str]:
        edges = range(self.fac_ptr[f], self.fac_ptr[f + 1])
        return [self.model.labels[self.var_labels[self.edge_var[e]]].name for e in edges]

    def kernel_args(self):
        return (
            self.card, self.psi, self.fac_kind, self.fac_evid, self.fac_const, self.fac_ptr,
            self.edge_var, self.edge_q, self.fac_tab_ptr, self.tables, self.var_ptr, self.var_edges,
        )


def build_factor_graph(model: Model, obs: Observation, ev: EvidenceSpec = None,
                       j0_max: int = J0_MAX) -> FactorGraph:
    ev = ev or EvidenceSpec()
    clamps = dict(ev.clamped_labels)
    specs = model.labels
    var_of = {}
    var_labels = []
    for j, spec in enumerate(specs):
        if spec.name not in clamps:
            var_of[spec.name] = len(var_labels)
            var_labels.append(j)
    width = max([s.size for s in specs] + [1])
    priors = label_priors(model, obs)
    psi = np.zeros((len(var_labels), width))
    for v, j in enumerate(var_labels):
        psi[v, : specs[j].size] = priors[j]

    fac_kind, fac_evid, fac_const, fac_ptr, factor_rules = [], [], [], [0], []
    edge_var, edge_q, fac_tab_ptr, tables = [], [], [], []

    for k, rule in enumerate(model.rules):
        state = ev.state(k)
        if state is None:
            continue
        if isinstance(rule, NoisyOrRule):
            const = 1.0
            scope = []
            for spec in specs:
                row = rule.q.get(spec.name)
                if row is None or all(x == 1.0 for x in row):
                    continue
                if spec.name in clamps:
                    const *= row[spec.index(clamps[spec.name])]
                else:
                    scope.append((spec, row))
            if not scope:
                value = 1.0 - const if state == 1 else const
                if value <= 0.0:
                    raise ContradictionError(f"rule {k} is impossible under the clamped labels")
                continue
            for spec, row in scope:
                edge_var.append(var_of[spec.name])
                padded = np.ones(width)
                padded[: spec.size] = row
                edge_q.append(padded)
            fac_kind.append(NOISY_OR)
            fac_const.append(const)
            fac_tab_ptr.append(0)
        else:
            names = fm.scope(rule.expr)
            if len(names) > j0_max:
                raise EngineInfeasibleError(
                    f"formula rule {k} has {len(names)} labels, more than J0_max={j0_max}"
                )
            ordered = [s for s in specs if s.name in names]
            free = [s for s in ordered if s.name not in clamps]
            nd = len(ordered)
            axes = {}
            for a, s in enumerate(ordered):
                cats = (clamps[s.name],) if s.name in clamps else s.categories
                axes[s.name] = (a, cats, nd)
            truth = fm.truth_table(rule.expr, axes)
            full_shape = [len(axes[s.name][1]) for s in ordered]
            p1 = np.broadcast_to(np.where(truth, rule.p, 1.0 - rule.p), full_shape)
            table = (p1 if state == 1 else 1.0 - p1).reshape([s.size for s in free])
            if not free:
                if float(table) <= 0.0:
                    raise ContradictionError(f"rule {k} is impossible under the clamped labels")
                continue
            for s in free:
                edge_var.append(var_of[s.name])
                edge_q.append(np.ones(width))
            fac_kind.append(TABLE)
            fac_const.append(1.0)
            fac_tab_ptr.append(len(tables))
            tables.extend(np.ascontiguousarray(table, dtype=float).ravel())
        fac_evid.append(state)
        fac_ptr.append(len(edge_var))
        factor_rules.append(k)

    return FactorGraph(
        model=model,
        clamps=clamps,
        var_labels=var_labels,
        factor_rules=factor_rules,
        card=np.array([specs[j].size for j in var_labels], dtype=np.intp),
        psi=psi,
        fac_kind=np.array(fac_kind, dtype=np.int8),
        fac_evid=np.array(fac_evid, dtype=np.int8),
        fac_const=np.array(fac_const, dtype=float),
        fac_ptr=np.array(fac_ptr, dtype=np.intp),
        edge_var=np.array(edge_var, dtype=np.intp),
        edge_q=np.array(edge_q, dtype=float).reshape(len(edge_var), width),
        fac_tab_ptr=np.array(fac_tab_ptr, dtype=np.intp),
        tables=np.array(tables, dtype=float),
    )


@dataclass
class BPResult:
    beliefs: Dict[str, np.ndarray]
    converged: bool
    iterations: int
    numeric_warning: bool = False


@dataclass
class MPEResult:
    assignment: Dict[str, str]
    converged: bool
    iterations: int
    numeric_warning: bool = False
    max_beliefs: Optional[Dict[str, np.ndarray]] = None


def _run(graph: FactorGraph, opts: BPOptions, max_mode: bool, backend):
    beliefs, iterations, converged, collapsed = kernels.run_bp(
        *graph.kernel_args(), bool(max_mode), float(opts.damping), float(opts.tol),
        int(opts.max_iters), backend=backend,
    )
    if not np.all(np.isfinite(beliefs)):
        raise NumericError("belief propagation produced non-finite beliefs")
    out = {}
    specs = graph.model.labels
    for v, j in enumerate(graph.var_labels):
        out[specs[j].name] = np.array(beliefs[v, : specs[j].size])
    for name, cat in graph.clamps.items():
        spec = graph.model.spec(name)
        point = np.zeros(spec.size)
        point[spec.index(cat)] = 1.0
        out[name] = point
    ordered = {s.name: out[s.name] for s in specs}
    return ordered, bool(converged), int(iterations), bool(collapsed)


def sum_product(graph: FactorGraph, opts: BPOptions = BPOptions(), backend: str = None) -> BPResult:
    """Approximate marginals by damped synchronous sum-product.

    Non-convergence within ``opts.max_iters`` is reported through
    ``converged=False``; the last beliefs are still returned.
    """
    beliefs, converged, iterations, collapsed = _run(graph, opts, False, backend)
    return BPResult(beliefs, converged, iterations, collapsed)


def _check_enumeration(graph):
    for f in range(graph.n_factors):
        if graph.fac_kind[f] == NOISY_OR and graph.fac_evid[f] == 0:
            continue
        lo, hi = graph.fac_ptr[f], graph.fac_ptr[f + 1]
        cards = graph.card[graph.edge_var[lo:hi]]
        worst = int(np.prod(cards) // cards.min())
        if worst > ENUMERATION_GUARD:
            raise EngineInfeasibleError(
                f"factor of rule {graph.factor_rules[f]} needs {worst} states per message"
            )


def max_product(graph: FactorGraph, opts: BPOptions = BPOptions(), backend: str = None) -> MPEResult:
    """Approximate MPE by max-product; ties resolve to the lowest category."""
    _check_enumeration(graph)
    beliefs, converged, iterations, collapsed = _run(graph, opts, True, backend)
    assignment = {}
    for spec in graph.model.labels:
        b = beliefs[spec.name]
        assignment[spec.name] = spec.categories[int(np.argmax(b))]
    return MPEResult(assignment, converged, iterations, collapsed, beliefs)


def marginal_query_loopy(model: Model, obs: Observation, ev: EvidenceSpec = None,
                         opts: BPOptions = BPOptions(), backend: str = None) -> QueryResult:
    res = sum_product(build_factor_graph(model, obs, ev), opts, backend)
    return QueryResult(marginals=res.beliefs, converged=res.converged, iterations=res.iterations)


def mpe_query_loopy(model: Model, obs: Observation, ev: EvidenceSpec = None,
                    opts: BPOptions = BPOptions(), backend: str = None) -> QueryResult:
    res = max_product(build_factor_graph(model, obs, ev), opts, backend)
    return QueryResult(mpe=(res.assignment, None), converged=res.converged, iterations=res.iterations)


def noisy_or_message_sum(rule: NoisyOrRule, target: str, incoming: Mapping[str, np.ndarray],
                         labels, evidence: int = 1) -> np.ndarray:
    """Sum-product message from a noisy-or rule to label ``target``.

    ``incoming`` holds the normalized variable-to-factor messages of the other
    scope labels.
    """
    specs = {s.name: s for s in labels}
    q_target = rule.row(target, specs[target].size)
    others = [name for name in rule.q if name != target and name in incoming]
    missing = [n for n in rule.scope if n != target and n not in incoming]
    if missing:
        raise KeyError(f"no incoming message from scope labels {missing}")
    return noisy_or_message(
        q_target,
        [rule.q[n] for n in others],
        [incoming[n] for n in others],
        evidence=evidence,
    )


def rule_factor(rule, labels, evidence: int = 1):
    """Dense factor table P(R = evidence | scope) and its scope label names."""
    if isinstance(rule, NoisyOrRule):
        specs = {s.name: s for s in labels}
        names = list(rule.q)
        return noisy_or_tensor([rule.row(n, specs[n].size) for n in names], evidence), names
    ordered = [s for s in labels if s.name in fm.scope(rule.expr)]
    nd = len(ordered)
    axes = {s.name: (a, s.categories, nd) for a, s in enumerate(ordered)}
    truth = np.broadcast_to(fm.truth_table(rule.expr, axes), [s.size for s in ordered])
    p1 = np.where(truth, rule.p, 1.0 - rule.p)
    return (p1 if evidence == 1 else 1.0 - p1), [s.name for s in ordered]


__all__ = [
    "BPOptions",
    "BPResult",
    "FactorGraph",
    "MPEResult",
    "build_factor_graph",
    "factor_message_enumerate",
    "marginal_query_loopy",
    "max_product",
    "mpe_query_loopy",
    "noisy_or_message_sum",
    "rule_factor",
    "sum_product",
]
