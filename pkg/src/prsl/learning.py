"""Learning noisy-or rules by regularized stochastic gradient ascent.

The objective per observation is log P(L' = l' | R = 1, x) for the labels
with known truth. Its derivative with respect to an inhibition probability
q^k_{jm} reduces to marginal queries on the network with rule k switched
off (R_k = 0) or left on, with and without the known labels clamped::

    term(c) = P(L_j = m | R_k = 0, R_-k = 1, c) * P(R_k = 0 | R_-k = 1, c)
              / (q^k_{jm} * P(R_k = 1 | R_-k = 1, c))
    dlogP/dq^k_{jm} = term(nothing clamped) - term(L' = l' clamped)

With complete truth the clamped term has the closed form
q^k_{-j l*} / (1 - q^k_{j m} q^k_{-j l*}) at m = l*_j and vanishes elsewhere.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from .betainc import beta_norm, solve_beta_params
from .errors import ContradictionError, NumericError
from .exact import EvidenceSpec, ExactEngine
from .loopy import BPOptions, build_factor_graph, sum_product
from .model import Model, NoisyOrRule, Observation

log = logging.getLogger(__name__)

Q_MIN = 1e-3
Q_MAX = 1.0


# ---------------------------------------------------------------------------
# parameters


class ParamVector:
    """Dense inhibition probabilities of every noisy-or rule of a model.

    Each noisy-or rule owns one row per label (all categories), so labels the
    rule does not mention appear as rows of ones. Formula rules are carried
    along untouched by ``to_model``.
    """

    def __init__(self, model: Model, values: Optional[np.ndarray] = None):
        self.model = model
        self.rule_ids = [k for k, r in enumerate(model.rules) if isinstance(r, NoisyOrRule)]
        self.sizes = [s.size for s in model.labels]
        self.label_offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        self.rule_width = int(self.label_offsets[-1])
        if values is None:
            values = np.ones(len(self.rule_ids) * self.rule_width)
            for r, k in enumerate(self.rule_ids):
                rule = model.rules[k]
                for j, spec in enumerate(model.labels):
                    row = rule.q.get(spec.name)
                    if row is not None:
                        values[self.slice(r, j)] = row
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (len(self.rule_ids) * self.rule_width,):
            raise ValueError("parameter vector has the wrong length")

    @property
    def n_rules(self) -> int:
        return len(self.rule_ids)

    def __len__(self):
        return self.values.size

    def copy(self) -> "ParamVector":
        return ParamVector(self.model, self.values.copy())

    def slice(self, r: int, j: int) -> slice:
        """Entries of label ``j`` in the ``r``-th noisy-or rule."""
        base = r * self.rule_width
        return slice(base + self.label_offsets[j], base + self.label_offsets[j + 1])

    def index(self, r: int, j: int, m: int) -> int:
        return r * self.rule_width + int(self.label_offsets[j]) + m

    def locate(self, flat: int) -> Tuple[int, int, int]:
        """(model rule index, label index, category index) of a flat entry."""
        r, rest = divmod(int(flat), self.rule_width)
        j = int(np.searchsorted(self.label_offsets, rest, side="right") - 1)
        return self.rule_ids[r], j, rest - int(self.label_offsets[j])

    def rows(self, r: int) -> List[np.ndarray]:
        return [self.values[self.slice(r, j)] for j in range(len(self.sizes))]

    def connected_rules(self) -> List[int]:
        """Positions r of rules with at least one entry below 1."""
        w = self.rule_width
        return [r for r in range(self.n_rules) if np.any(self.values[r * w:(r + 1) * w] < 1.0)]

    def to_model(self, drop_disconnected: bool = False) -> Model:
        """Model with these inhibition probabilities.

        A noisy-or rule whose entries are all 1 can never fire, so
        conditioning on it contradicts everything; ``drop_disconnected``
        removes such rules from the network instead.
        """
        rules = list(self.model.rules)
        dropped = set()
        for r, k in enumerate(self.rule_ids):
            q = {}
            for j, spec in enumerate(self.model.labels):
                row = self.values[self.slice(r, j)]
                if np.any(row != 1.0):
                    q[spec.name] = tuple(float(x) for x in row)
            if drop_disconnected and not q:
                dropped.add(k)
            rules[k] = NoisyOrRule(q, crisp=rules[k].crisp)
        return self.model.with_rules([r for k, r in enumerate(rules) if k not in dropped])

    def scatter(self, grad: np.ndarray, rules: Sequence[int]) -> np.ndarray:
        """Embed a gradient over the sub-model holding only ``rules``."""
        out = np.zeros(len(self))
        w = self.rule_width
        for i, r in enumerate(rules):
            out[r * w:(r + 1) * w] = grad[i * w:(i + 1) * w]
        return out


# ---------------------------------------------------------------------------
# queries used by the gradient


@dataclass
class RuleStats:
    """Quantities of one rule under some clamping c."""

    log_odds_off: float  # log P(R_k=0 | R_-k=1, c) - log P(R_k=1 | R_-k=1, c)
    marginals_off: Optional[List[np.ndarray]]  # P(L_j | R_k=0, R_-k=1, c); None if R_k=0 impossible


class ExactQueries:
    def __init__(self, model: Model, obs: Observation):
        self.model = model
        self.engine = ExactEngine(model, obs)
        self._on = {}

    def _log_on(self, clamps):
        key = tuple(sorted(clamps.items()))
        if key not in self._on:
            self._on[key] = self.engine.log_evidence(EvidenceSpec(clamped_labels=dict(clamps)))
        return self._on[key]

    def rule_stats(self, k: int, clamps: Mapping[str, str]) -> RuleStats:
        log_on = self._log_on(clamps)
        if log_on == -math.inf:
            raise ContradictionError("known labels are impossible under the current rules")
        try:
            post = self.engine.query(EvidenceSpec({k: 0}, dict(clamps)))
        except ContradictionError:
            return RuleStats(-math.inf, None)
        margs = post.marginals()
        return RuleStats(post.log_evidence - log_on, [margs[s.name] for s in self.model.labels])

    def objective(self, truth: Mapping[str, str]) -> float:
        return self._log_on(truth) - self._log_on({})


class LoopyQueries:
    """BP-based estimates of the gradient queries.

    P(R_k = 1 | R_-k = 1) is approximated from the beliefs of the network
    without rule k, treating the scope labels as independent.
    """

    def __init__(self, model: Model, obs: Observation, opts: BPOptions = BPOptions(), backend=None):
        self.model = model
        self.obs = obs
        self.opts = opts
        self.backend = backend

    def _beliefs(self, ev):
        res = sum_product(build_factor_graph(self.model, self.obs, ev), self.opts, self.backend)
        return [res.beliefs[s.name] for s in self.model.labels]

    def rule_stats(self, k: int, clamps: Mapping[str, str]) -> RuleStats:
        rule = self.model.rules[k]
        beliefs = self._beliefs(EvidenceSpec(clamped_labels=dict(clamps), excluded_rules=frozenset([k])))
        p_off = 1.0
        for spec, b in zip(self.model.labels, beliefs):
            row = rule.q.get(spec.name)
            if row is not None:
                p_off *= float(np.dot(b, row))
        if p_off <= 0.0:
            return RuleStats(-math.inf, None)
        if p_off >= 1.0:
            raise ContradictionError(f"rule {k} cannot fire under the known labels")
        try:
            margs = self._beliefs(EvidenceSpec({k: 0}, dict(clamps)))
        except ContradictionError:
            return RuleStats(-math.inf, None)
        return RuleStats(math.log(p_off) - math.log1p(-p_off), margs)

    def objective(self, truth: Mapping[str, str]) -> float:
        beliefs = self._beliefs(EvidenceSpec())
        total = 0.0
        for spec, b in zip(self.model.labels, beliefs):
            if spec.name in truth:
                p = b[spec.index(truth[spec.name])]
                total += math.log(p) if p > 0 else -math.inf
        return total


def make_queries(model: Model, obs: Observation, engine: str = "exact", bp: BPOptions = BPOptions()):
    if engine == "exact":
        return ExactQueries(model, obs)
    if engine == "loopy":
        return LoopyQueries(model, obs, bp)
    raise ValueError(f"unknown engine {engine!r}")


# ---------------------------------------------------------------------------
# gradients


def _term(stats: RuleStats, q_row: np.ndarray, j: int) -> np.ndarray:
    if stats.marginals_off is None:
        return np.zeros_like(q_row)
    return stats.marginals_off[j] * math.exp(stats.log_odds_off) / q_row


def grad_full(model: Model, obs: Observation, truth: Mapping[str, str], engine: str = "exact",
              bp: BPOptions = BPOptions()) -> np.ndarray:
    """Gradient of log P(L = truth | R = 1, x) over the model's ParamVector."""
    params = ParamVector(model)
    missing = [s.name for s in model.labels if s.name not in truth]
    if missing:
        raise ValueError(f"truth is incomplete; missing {missing} (use grad_partial)")
    queries = make_queries(model, obs, engine, bp)
    star = [s.index(truth[s.name]) for s in model.labels]
    grad = np.zeros(len(params))
    for r, k in enumerate(params.rule_ids):
        stats = queries.rule_stats(k, {})
        rows = params.rows(r)
        picked = np.array([row[m] for row, m in zip(rows, star)])
        for j, row in enumerate(rows):
            g = _term(stats, row, j)
            q_minus = float(np.prod(np.delete(picked, j)))
            # the floor keeps the step finite when the truth has become
            # impossible because every picked entry reached the clamp at 1
            g[star[j]] -= q_minus / max(1.0 - row[star[j]] * q_minus, Q_MIN)
            grad[params.slice(r, j)] = g
    return grad


def grad_partial(model: Model, obs: Observation, truth: Mapping[str, str], engine: str = "exact",
                 bp: BPOptions = BPOptions()) -> np.ndarray:
    """Gradient of log P(L' = truth | R = 1, x) for partial (or empty) truth."""
    params = ParamVector(model)
    grad = np.zeros(len(params))
    if not truth:
        return grad
    queries = make_queries(model, obs, engine, bp)
    clamps = dict(truth)
    for r, k in enumerate(params.rule_ids):
        free = queries.rule_stats(k, {})
        known = queries.rule_stats(k, clamps)
        for j, row in enumerate(params.rows(r)):
            grad[params.slice(r, j)] = _term(free, row, j) - _term(known, row, j)
    return grad


def observation_gradient(model: Model, obs: Observation, engine: str = "exact",
                         bp: BPOptions = BPOptions()) -> np.ndarray:
    """grad_full when the observation's truth is complete, else grad_partial."""
    truth = {k: v for k, v in obs.truth.items() if v is not None}
    if len(truth) == len(model.labels):
        return grad_full(model, obs, truth, engine, bp)
    return grad_partial(model, obs, truth, engine, bp)


def objective(model: Model, obs: Observation, engine: str = "exact", bp: BPOptions = BPOptions()) -> float:
    """Log-likelihood of the observation's known labels (0 if none are known)."""
    truth = {k: v for k, v in obs.truth.items() if v is not None}
    if not truth:
        return 0.0
    return make_queries(model, obs, engine, bp).objective(truth)


# ---------------------------------------------------------------------------
# regularization


def softmin(q_row, alpha: float) -> float:
    q = np.asarray(q_row, dtype=float)
    if q.size == 1:
        return float(q[0])
    return float(-logsumexp(-alpha * q) / alpha)


def softmin_grad(q_row, alpha: float) -> np.ndarray:
    return softmax(-alpha * np.asarray(q_row, dtype=float))


@dataclass(frozen=True)
class RegularizationConfig:
    alpha: float = 20.0
    j0: int = 5
    eps: float = 1e-4
    lam: float = 0.98
    beta: Optional[Tuple[float, float]] = None
    gamma: Tuple[float, float] = (0.1, 0.6)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.j0 < 1:
            raise ValueError("J0 must be at least 1")
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lambda must lie in (0, 1)")
        if self.beta is not None and not all(0.0 < b < 1.0 for b in self.beta):
            raise ValueError("beta parameters must lie in (0, 1)")
        if self.beta is None and not self.gamma[0] < self.gamma[1]:
            raise ValueError("gamma0 must be smaller than gamma1")

    def resolve(self) -> Tuple[float, float, float]:
        """(beta1, beta2, eta)."""
        if self.beta is not None:
            b1, b2 = self.beta
            return b1, b2, beta_norm(b1, b2)
        return _solve_cached(*self.gamma)


_BETA_CACHE: Dict[Tuple[float, float], Tuple[float, float, float]] = {}


def _solve_cached(g0, g1):
    if (g0, g1) not in _BETA_CACHE:
        _BETA_CACHE[(g0, g1)] = solve_beta_params(g0, g1)
    return _BETA_CACHE[(g0, g1)]


def _soft_minima(params: ParamVector, alpha: float) -> np.ndarray:
    return np.array([
        [softmin(row, alpha) for row in params.rows(r)] for r in range(params.n_rules)
    ]).reshape(params.n_rules, len(params.sizes))


def reg_penalty(params: ParamVector, cfg: RegularizationConfig, t: int) -> float:
    if params.n_rules == 0:
        return 0.0
    b1, b2, eta = cfg.resolve()
    s = _soft_minima(params, cfg.alpha)
    body = (b1 - 1.0) * np.sum(np.log(s + cfg.eps)) + (b2 - 1.0) * np.sum(np.log(1.0 - s + cfg.eps))
    return float(cfg.lam ** t / eta * body)


def reg_grad(params: ParamVector, cfg: RegularizationConfig, t: int) -> np.ndarray:
    grad = np.zeros(len(params))
    if params.n_rules == 0:
        return grad
    b1, b2, eta = cfg.resolve()
    scale = cfg.lam ** t / eta
    for r in range(params.n_rules):
        for j, row in enumerate(params.rows(r)):
            s = softmin(row, cfg.alpha)
            ds = (b1 - 1.0) / (s + cfg.eps) - (b2 - 1.0) / (1.0 - s + cfg.eps)
            grad[params.slice(r, j)] = scale * ds * softmin_grad(row, cfg.alpha)
    return grad


def hard_prune(params: ParamVector, cfg: RegularizationConfig) -> ParamVector:
    """Keep at most J0 connected labels per rule, those with the lowest soft minima."""
    out = params.copy()
    for r in range(out.n_rules):
        rows = out.rows(r)
        connected = [j for j, row in enumerate(rows) if np.any(row < 1.0)]
        if len(connected) <= cfg.j0:
            continue
        ranked = sorted(connected, key=lambda j: (softmin(rows[j], cfg.alpha), j))
        for j in ranked[cfg.j0:]:
            out.values[out.slice(r, j)] = 1.0
    return out


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


@dataclass(frozen=True)
class TrainConfig:
    n_rules: int = 3
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    engine: str = "exact"
    reg: RegularizationConfig = field(default_factory=RegularizationConfig)
    bp: BPOptions = field(default_factory=BPOptions)
    threads: int = 1

    def __post_init__(self):
        if self.n_rules < 0:
            raise ValueError("rule count must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.engine not in ("exact", "loopy"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.threads < 1:
            raise ValueError("threads must be positive")


def adam_step(params: ParamVector, grad: np.ndarray, state: AdamState, cfg: TrainConfig) -> ParamVector:
    """One bias-corrected ADAM ascent step, then clamping and hard pruning.

    ``state`` is updated in place.
    """
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        k, j, m = params.locate(bad[0])
        raise NumericError(
            f"non-finite gradient {grad[bad[0]]} at rule {k}, label "
            f"{params.model.labels[j].name!r}, category {params.model.labels[j].categories[m]!r}"
        )
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    out = params.copy()
    out.values = np.clip(out.values + cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps), Q_MIN, Q_MAX)
    return hard_prune(out, cfg.reg)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: Model
    initial_model: Model
    history: List[dict]
    best_epoch: int


def initial_params(base: Model, cfg: TrainConfig) -> ParamVector:
    """K fresh noisy-or rules with q ~ U(0.5, 0.99), pruned to J0 labels each."""
    rng = np.random.default_rng(cfg.seed)
    fixed = [r for r in base.rules if not isinstance(r, NoisyOrRule)]
    width = sum(s.size for s in base.labels)
    draws = rng.uniform(0.5, 0.99, size=(cfg.n_rules, width))
    rules = []
    for r in range(cfg.n_rules):
        q, pos = {}, 0
        for s in base.labels:
            q[s.name] = tuple(draws[r, pos: pos + s.size])
            pos += s.size
        rules.append(NoisyOrRule(q))
    params = ParamVector(base.with_rules(fixed + rules))
    return hard_prune(params, cfg.reg)


def _mean_objective(model, data, cfg, pool):
    scored = [o for o in data if any(v is not None for v in o.truth.values())]
    if not scored:
        return float("nan")
    values = list(_map(pool, lambda o: objective(model, o, cfg.engine, cfg.bp), scored))
    return float(np.mean(values))


def _map(pool, fn, items):
    return pool.map(fn, items) if pool is not None else map(fn, items)


def train(dataset: Sequence[Observation], labels, cfg: TrainConfig,
          validation: Sequence[Observation] = None) -> TrainResult:
    """Fit ``cfg.n_rules`` noisy-or rules to the known labels of ``dataset``.

    ``labels`` is either a sequence of LabelSpec or a Model whose priors,
    calibrators and formula rules are kept (formula rules stay fixed). The
    returned model is the epoch snapshot with the best validation objective
    (training objective when no validation data is given); epoch 0 is the
    initialization.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training data is empty")
    base = labels if isinstance(labels, Model) else Model(tuple(labels))
    base = base.with_rules([r for r in base.rules if not isinstance(r, NoisyOrRule)])
    if not any(any(v is not None for v in o.truth.values()) for o in dataset):
        log.warning("training data carries no truth labels; only the regularizer moves the parameters")

    params = initial_params(base, cfg)
    initial_model = params.to_model(drop_disconnected=True)
    rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState.zeros(len(params))
    history = []
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    def record(epoch, model):
        row = {
            "epoch": epoch,
            "train_objective": _mean_objective(model, dataset, cfg, pool),
            "val_objective": _mean_objective(model, validation, cfg, pool) if validation else float("nan"),
            "reg_penalty": reg_penalty(params, cfg.reg, state.t),
        }
        history.append(row)
        return row["val_objective"] if validation else row["train_objective"]

    try:
        best_model = initial_model
        best_score = record(0, initial_model)
        best_epoch = 0
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(dataset))
            for start in range(0, len(order), cfg.batch_size):
                batch = [dataset[i] for i in order[start: start + cfg.batch_size]]
                model = params.to_model(drop_disconnected=True)
                live = params.connected_rules()
                grads = _map(pool, lambda o: observation_gradient(model, o, cfg.engine, cfg.bp), batch)
                total = np.zeros(len(params))
                for g in grads:  # fixed order keeps runs reproducible
                    total += params.scatter(g, live)
                grad = total / len(batch) + reg_grad(params, cfg.reg, state.t)
                params = adam_step(params, grad, state, cfg)
            model = params.to_model(drop_disconnected=True)
            score = record(epoch, model)
            if score > best_score or (np.isnan(best_score) and not np.isnan(score)):
                best_model, best_score, best_epoch = model, score, epoch
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(best_model, initial_model, history, best_epoch)


__all__ = [
    "AdamState",
    "ExactQueries",
    "LoopyQueries",
    "ParamVector",
    "RegularizationConfig",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "grad_full",
    "grad_partial",
    "hard_prune",
    "initial_params",
    "objective",
    "observation_gradient",
    "reg_grad",
    "reg_penalty",
    "softmin",
    "softmin_grad",
    "train",
]
