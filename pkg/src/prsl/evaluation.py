"""Multi-label scores and cross-validation splits."""
from __future__ import annotations

import math
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .errors import EngineInfeasibleError
from .exact import EvidenceSpec, ExactEngine
from .loopy import BPOptions, marginal_query_loopy


class Score(NamedTuple):
    value: float
    scored: int
    skipped: int


def _known(truth: Optional[Mapping[str, str]]) -> Dict[str, str]:
    return {k: v for k, v in (truth or {}).items() if v is not None}


def joint_accuracy(predictions: Sequence[Mapping[str, str]], truths: Sequence[Mapping[str, str]],
                   labels: Sequence[str] = None) -> Score:
    """Fraction of observations with every label predicted correctly.

    Observations whose truth is missing any label are skipped. ``labels``
    fixes the label set; by default it is taken from each prediction.
    """
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths differ in length")
    hits = scored = skipped = 0
    for pred, truth in zip(predictions, truths):
        names = list(labels) if labels is not None else list(pred)
        known = _known(truth)
        if any(n not in known for n in names):
            skipped += 1
            continue
        scored += 1
        hits += all(pred[n] == known[n] for n in names)
    return Score(hits / scored if scored else float("nan"), scored, skipped)


def hamming_loss(predictions: Sequence[Mapping[str, str]], truths: Sequence[Mapping[str, str]],
                 labels: Sequence[str] = None) -> Score:
    """Mean over observations of the fraction of wrongly predicted labels.

    With partial truth only the known labels count, and the per-observation
    denominator shrinks accordingly; observations without any truth are
    skipped.
    """
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths differ in length")
    rates = []
    skipped = 0
    for pred, truth in zip(predictions, truths):
        names = list(labels) if labels is not None else list(pred)
        known = _known(truth)
        names = [n for n in names if n in known]
        if not names:
            skipped += 1
            continue
        rates.append(sum(pred[n] != known[n] for n in names) / len(names))
    return Score(float(np.mean(rates)) if rates else float("nan"), len(rates), skipped)


def labelwise_loglik(marginals: Mapping[str, Sequence[float]], truth: Mapping[str, str],
                     categories: Mapping[str, Sequence[str]]) -> float:
    """sum_j log P(L_j = truth_j) over the known labels."""
    total = 0.0
    for name, cat in _known(truth).items():
        p = float(marginals[name][list(categories[name]).index(cat)])
        total += math.log(p) if p > 0 else -math.inf
    return total


def median_loglik(values: Sequence[float]) -> float:
    """Median of per-observation log-likelihoods; -inf entries rank lowest."""
    if len(values) == 0:
        raise ValueError("no log-likelihood values to summarize")
    return float(np.median(np.asarray(values, dtype=float)))


def model_loglik(model, observations, mode: str = "joint", engine: str = "exact", bp=None) -> List[float]:
    """Per-observation log-likelihood of the known truth under ``model``.

    ``joint`` needs the exact engine (log P(L' = l' | R = 1, x));
    ``labelwise`` sums log marginals of the known labels, from the exact
    engine or loopy BP.
    """
    if mode not in ("joint", "labelwise"):
        raise ValueError(f"unknown mode {mode!r}")
    cats = {s.name: s.categories for s in model.labels}
    out = []
    for obs in observations:
        truth = _known(obs.truth)
        if mode == "joint":
            if engine != "exact":
                raise ValueError("joint log-likelihood needs the exact engine")
            try:
                eng = ExactEngine(model, obs)
                base = eng.log_evidence()
            except EngineInfeasibleError as exc:
                raise EngineInfeasibleError(f"{exc}; use labelwise mode instead") from None
            out.append(eng.log_evidence(EvidenceSpec(clamped_labels=truth)) - base)
            continue
        if engine == "exact":
            margs = ExactEngine(model, obs).query().marginals()
        else:
            margs = marginal_query_loopy(model, obs, opts=bp or BPOptions()).marginals
        out.append(labelwise_loglik(margs, truth, cats))
    return out


def kfold_split(n_items: int, k: int, ratios=(8, 1, 1), seed: int = 0) -> List[Dict[str, np.ndarray]]:
    """Index sets for k rotations of a shuffled k-block partition.

    In fold ``i`` block ``(i + b) % k`` goes to train for the first
    ``ratios[0]`` offsets b, then to validation, then to test, so each block
    is the test set of exactly ``ratios[2]`` folds (once for the usual
    ratios ending in 1).
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    if len(ratios) != 3 or any(int(r) != r or r < 1 for r in ratios) or sum(ratios) != k:
        raise ValueError(f"ratios {tuple(ratios)} must be three positive integers summing to k={k}")
    if n_items < k:
        raise ValueError(f"cannot split {n_items} items into {k} blocks")
    perm = np.random.default_rng(seed).permutation(n_items)
    blocks = np.array_split(perm, k)
    n_train, n_val, _ = (int(r) for r in ratios)
    folds = []
    for i in range(k):
        order = [blocks[(i + b) % k] for b in range(k)]
        folds.append({
            "train": np.sort(np.concatenate(order[:n_train])),
            "val": np.sort(np.concatenate(order[n_train:n_train + n_val])),
            "test": np.sort(np.concatenate(order[n_train + n_val:])),
        })
    return folds


__all__ = [
    "Score",
    "hamming_loss",
    "joint_accuracy",
    "kfold_split",
    "labelwise_loglik",
    "median_loglik",
    "model_loglik",
]
