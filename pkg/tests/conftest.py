import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from prsl.io import load_model, read_dataset  # noqa: E402
from prsl.model import LabelSpec, Model, NoisyOrRule, Observation  # noqa: E402

DATA = Path(__file__).parent / "data"


@pytest.fixture
def warehouse_model():
    return load_model(DATA / "warehouse_model.json")


@pytest.fixture
def warehouse_obs():
    return read_dataset(DATA / "warehouse_obs.jsonl")[0]


@pytest.fixture
def data_dir():
    return DATA


def random_noisy_or_model(rng, n_labels, n_rules, max_cats=3, density=0.8, q_low=0.05):
    labels = [
        LabelSpec(f"L{j}", tuple(f"c{m}" for m in range(int(rng.integers(2, max_cats + 1)))))
        for j in range(n_labels)
    ]
    rules = []
    for _ in range(n_rules):
        q = {s.name: tuple(rng.uniform(q_low, 1.0, s.size)) for s in labels if rng.random() < density}
        if not q:
            s = labels[int(rng.integers(n_labels))]
            q = {s.name: tuple(rng.uniform(q_low, 1.0, s.size))}
        rules.append(NoisyOrRule(q))
    return Model(tuple(labels), tuple(rules))


def random_observation(rng, model, oid="o"):
    return Observation(oid, {s.name: rng.dirichlet(np.ones(s.size)) for s in model.labels})


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
