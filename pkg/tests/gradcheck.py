"""Finite-difference check of the analytic gradients on random instances."""
from collections import Counter

import numpy as np

from conftest import random_noisy_or_model, random_observation
from oracles import fd_gradient, model_arrays
from prsl.learning import ParamVector, grad_full, grad_partial

REL_TOL = 1e-4
ABS_FLOOR = 1e-7


def _case(truth_kind, truth, j, m):
    if truth_kind == "full":
        return "full/correct" if truth[j] == m else "full/incorrect"
    if j not in truth:
        return "partial/unknown"
    return "partial/known-correct" if truth[j] == m else "partial/known-incorrect"


def run(n_instances, seed=0):
    """Returns (failures, case counts, (largest absolute error, largest relative error)).

    The relative error is taken over entries whose derivative exceeds the
    absolute floor.
    """
    rng = np.random.default_rng(seed)
    failures, cases = [], Counter()
    worst_abs = worst_rel = 0.0
    for i in range(n_instances):
        model = random_noisy_or_model(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)), q_low=0.05)
        obs = random_observation(rng, model)
        sizes, priors, rows = model_arrays(model, obs)
        kind = "full" if i % 2 == 0 else "partial"
        if kind == "full":
            truth = {j: int(rng.integers(n)) for j, n in enumerate(sizes)}
        else:
            truth = {j: int(rng.integers(n)) for j, n in enumerate(sizes) if rng.random() < 0.5}
        named = {model.labels[j].name: model.labels[j].categories[m] for j, m in truth.items()}
        params = ParamVector(model)
        grads = [grad_partial(model, obs, named)]
        if kind == "full":
            grads.append(grad_full(model, obs, named))
        fd = fd_gradient(sizes, priors, rows, truth)
        for (k, j, m), expected in fd.items():
            cases[_case(kind, truth, j, m)] += 1
            for g in grads:
                got = g[params.index(k, j, m)]
                err = abs(got - expected)
                rel = err / abs(expected) if expected else err
                worst_abs = max(worst_abs, err)
                if abs(expected) > ABS_FLOOR:
                    worst_rel = max(worst_rel, rel)
                if err > ABS_FLOOR and rel > REL_TOL:
                    failures.append((i, (k, j, m), got, expected))
    return failures, cases, (worst_abs, worst_rel)
