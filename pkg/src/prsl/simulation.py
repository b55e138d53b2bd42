"""Random pRSL models with Dirichlet classifier outputs, and the harness that
measures how well loopy BP approximates exact marginals and MPEs on them."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import EngineInfeasibleError
from .exact import STATE_GUARD, ExactEngine
from .loopy import BPOptions, build_factor_graph, max_product, sum_product
from .model import LabelSpec, Model, NoisyOrRule, Observation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    n_labels: int
    n_rules: int
    n_data: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("n_labels", "n_rules", "n_data"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")


def sample_inhibition(rng: np.random.Generator, size=None):
    """Draws from the density 2(1 - x) on [0, 1] by inverse transform."""
    u = rng.random(size)
    x = 1.0 - np.sqrt(1.0 - u)
    # q = 0 only arises from u = 0 exactly; such a gate could never be inhibited
    while np.any(x == 0.0):
        redraw = x == 0.0 if size is not None else True
        x = np.where(redraw, 1.0 - np.sqrt(1.0 - rng.random(size)), x)
    return x if size is not None else float(x)


def generate_model(cfg: SimConfig) -> Model:
    rng = np.random.default_rng([cfg.seed, 0])
    labels = []
    for i in range(cfg.n_labels):
        n_cat = int(rng.integers(2, 5))
        labels.append(LabelSpec(f"L{i + 1}", tuple(f"c{m + 1}" for m in range(n_cat))))
    pool = [(j, m) for j, spec in enumerate(labels) for m in range(spec.size)]
    rules = []
    for _ in range(cfg.n_rules):
        n_draw = min(int(rng.integers(2, 6)), len(pool))
        picks = rng.choice(len(pool), size=n_draw, replace=False)
        inh = sample_inhibition(rng, n_draw)
        rows = {}
        for p, q in zip(sorted(picks), inh):
            j, m = pool[p]
            row = rows.setdefault(j, [1.0] * labels[j].size)
            row[m] = float(q)
        rules.append(NoisyOrRule({labels[j].name: tuple(row) for j, row in sorted(rows.items())}))
    return Model(tuple(labels), tuple(rules))


def generate_observations(model: Model, n_data: int, seed: int) -> List[Observation]:
    """``n_data`` observations with flat-Dirichlet classifier outputs per label."""
    rng = np.random.default_rng([seed, 1])
    width = len(str(max(n_data - 1, 0)))
    out = []
    for i in range(n_data):
        preds = {}
        for spec in model.labels:
            e = rng.standard_exponential(spec.size)
            preds[spec.name] = e / e.sum()
        out.append(Observation(f"obs{i:0{width}d}", preds))
    return out


@dataclass
class ApproxRow:
    size: str
    rep: int
    correlation: float
    mpe_match_joint: float
    mpe_match_marginal: float


@dataclass
class ApproxReport:
    rows: List[ApproxRow] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)

    def medians(self) -> dict:
        out = {}
        for size in dict.fromkeys(r.size for r in self.rows):
            sel = [r for r in self.rows if r.size == size]
            out[size] = {
                "correlation": float(np.median([r.correlation for r in sel])),
                "mpe_match_joint": float(np.median([r.mpe_match_joint for r in sel])),
                "mpe_match_marginal": float(np.median([r.mpe_match_marginal for r in sel])),
            }
        return out

    def to_csv(self) -> str:
        lines = ["size,rep,correlation,mpe_match_joint,mpe_match_marginal"]
        for r in self.rows:
            lines.append(
                f"{r.size},{r.rep},{r.correlation:.10g},{r.mpe_match_joint:.10g},{r.mpe_match_marginal:.10g}"
            )
        return "\n".join(lines) + "\n"


def _replicate(n_labels, n_rules, n_data, seed, opts, backend, mpe=True):
    model = generate_model(SimConfig(n_labels, n_rules, n_data, seed))
    states = int(np.prod([s.size for s in model.labels]))
    if states > STATE_GUARD:
        raise EngineInfeasibleError(f"{states} joint states exceed the exact-engine guard")
    exact_vals, approx_vals = [], []
    hits_joint = hits_marg = 0
    for obs in generate_observations(model, n_data, seed):
        post = ExactEngine(model, obs).query()
        exact = post.marginals()
        graph = build_factor_graph(model, obs)
        approx = sum_product(graph, opts, backend).beliefs
        for spec in model.labels:
            exact_vals.extend(exact[spec.name])
            approx_vals.extend(approx[spec.name])
        if mpe:
            truth, _ = post.argmax()
            joint = max_product(graph, opts, backend).assignment
            marg = {s.name: s.categories[int(np.argmax(approx[s.name]))] for s in model.labels}
            hits_joint += joint == truth
            hits_marg += marg == truth
    corr = float(np.corrcoef(exact_vals, approx_vals)[0, 1])
    nan = float("nan")
    return corr, (hits_joint / n_data if mpe else nan), (hits_marg / n_data if mpe else nan)


def approx_quality_experiment(sizes: Sequence[Tuple[int, int]], reps: int = 10, n_data: int = 100,
                              seed: int = 0, opts: BPOptions = BPOptions(), threads: int = 1,
                              backend: str = None) -> ApproxReport:
    """Compare loopy BP with the exact engine on simulated models.

    Replication ``r`` uses seed ``seed + r``. Sizes whose models exceed the
    exact-engine guard are reported in ``skipped`` rather than raising.
    """
    report = ApproxReport()
    jobs = [(nl, nr, rep) for nl, nr in sizes for rep in range(reps)]

    def run(job):
        nl, nr, rep = job
        try:
            return _replicate(nl, nr, n_data, seed + rep, opts, backend)
        except EngineInfeasibleError as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    for (nl, nr, rep), res in zip(jobs, results):
        size = f"{nl}x{nr}"
        if isinstance(res, Exception):
            msg = f"size {size} rep {rep} skipped: {res}"
            log.warning(msg)
            report.skipped.append(msg)
            continue
        report.rows.append(ApproxRow(size, rep, *res))
    return report


def parse_size(text: str) -> Tuple[int, int]:
    """'5x5' -> (5, 5)."""
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise ValueError(f"size {text!r} is not of the form <labels>x<rules>") from None


__all__ = [
    "ApproxReport",
    "ApproxRow",
    "SimConfig",
    "approx_quality_experiment",
    "generate_model",
    "generate_observations",
    "parse_size",
    "sample_inhibition",
]
