"""Domain types for the rule-stacking network and their validation.

A :class:`Model` is the network minus per-observation inputs: ordered label
specifications, a sequence of rules (propositional formulas or noisy-or
gates) and optional label priors used by dummy classifiers. Per-observation
classifier outputs live in :class:`Observation`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from . import formula as fm
from .errors import CalibrationError, DistributionError

#: inputs whose sum is within this distance of 1 are silently renormalized
RENORMALIZE_TOL = 1e-6


@dataclass(frozen=True)
class LabelSpec:
    name: str
    categories: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))

    @property
    def size(self) -> int:
        return len(self.categories)

    def index(self, category: str) -> int:
        try:
            return self.categories.index(category)
        except ValueError:
            raise KeyError(f"label {self.name!r} has no category {category!r}") from None


@dataclass(frozen=True)
class CategoricalDist:
    """Probability vector over the categories of one label.

    Construct through :meth:`of` to get the normalization policy: inputs
    off by at most ``RENORMALIZE_TOL`` are rescaled, anything worse raises.
    """

    probs: Tuple[float, ...]

    @classmethod
    def of(cls, values) -> "CategoricalDist":
        return cls(tuple(float(v) for v in normalize(values)))

    @classmethod
    def uniform(cls, size: int) -> "CategoricalDist":
        return cls(tuple([1.0 / size] * size))

    def __len__(self):
        return len(self.probs)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype or float)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)


def normalize(values, tol: float = RENORMALIZE_TOL) -> np.ndarray:
    """Validate a probability vector, renormalizing small rounding drift."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DistributionError(f"expected a non-empty 1-d probability vector, got {values!r}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise DistributionError(f"probabilities must be finite and non-negative: {values!r}")
    total = arr.sum()
    if abs(total - 1.0) > tol:
        raise DistributionError(f"probabilities sum to {total!r}, not 1: {values!r}")
    return arr / total


@dataclass(frozen=True)
class FormulaRule:
    expr: fm.Formula
    p: float

    kind = "formula"


@dataclass(frozen=True)
class NoisyOrRule:
    """Multicategorical noisy-or gate.

    ``q`` maps label names to one inhibition probability per category. Labels
    missing from the map behave as if all their entries were 1. ``crisp``
    rules may hold exact zeros (pure logic); learned rules never do.
    """

    q: Dict[str, Tuple[float, ...]]
    crisp: bool = False

    kind = "noisy_or"

    def __post_init__(self):
        object.__setattr__(
            self, "q", {label: tuple(float(x) for x in row) for label, row in self.q.items()}
        )

    def row(self, label: str, size: int) -> Tuple[float, ...]:
        return self.q.get(label, (1.0,) * size)

    @property
    def scope(self) -> list:
        """Labels with at least one inhibition probability below 1."""
        return [label for label, row in self.q.items() if any(x < 1.0 for x in row)]


Rule = Union[FormulaRule, NoisyOrRule]


class Calibrator(Protocol):
    def __call__(self, probs: np.ndarray) -> np.ndarray: ...


class IdentityCalibrator:
    def __call__(self, probs):
        return np.asarray(probs, dtype=float)

    def to_json(self):
        return {"type": "identity"}

    def __eq__(self, other):
        return isinstance(other, IdentityCalibrator)

    def __repr__(self):
        return "IdentityCalibrator()"


class TemperatureCalibrator:
    """Power calibration ``p ** (1 / T)`` followed by renormalization."""

    def __init__(self, temperature: float):
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        self.temperature = float(temperature)

    def __call__(self, probs):
        probs = np.asarray(probs, dtype=float)
        if self.temperature == 1.0:
            return probs
        out = probs ** (1.0 / self.temperature)
        return out / out.sum()

    def to_json(self):
        return {"type": "temperature", "T": self.temperature}

    def __eq__(self, other):
        return isinstance(other, TemperatureCalibrator) and other.temperature == self.temperature

    def __repr__(self):
        return f"TemperatureCalibrator({self.temperature})"


def calibrate(raw: CategoricalDist, calibrator: Optional[Calibrator] = None) -> CategoricalDist:
    """Apply a calibration map to one classifier output."""
    if calibrator is None:
        return raw
    out = calibrator(raw.as_array())
    try:
        dist = CategoricalDist.of(out)
    except DistributionError as exc:
        raise CalibrationError(f"calibrator {calibrator!r} returned an invalid distribution") from exc
    if len(dist) != len(raw):
        raise CalibrationError("calibrator changed the number of categories")
    return dist


@dataclass(frozen=True)
class Model:
    labels: Tuple[LabelSpec, ...]
    rules: Tuple[Rule, ...] = ()
    priors: Dict[str, CategoricalDist] = field(default_factory=dict)
    calibrators: Dict[str, Calibrator] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "rules", tuple(self.rules))
        object.__setattr__(self, "priors", dict(self.priors))
        object.__setattr__(self, "calibrators", dict(self.calibrators))

    @property
    def label_names(self) -> list:
        return [spec.name for spec in self.labels]

    def label_index(self, name: str) -> int:
        for i, spec in enumerate(self.labels):
            if spec.name == name:
                return i
        raise KeyError(f"unknown label {name!r}")

    def spec(self, name: str) -> LabelSpec:
        return self.labels[self.label_index(name)]

    def with_rules(self, rules) -> "Model":
        return Model(self.labels, tuple(rules), self.priors, self.calibrators)


@dataclass(frozen=True)
class Observation:
    id: str
    predictions: Dict[str, CategoricalDist] = field(default_factory=dict)
    truth: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        preds = {
            k: v if isinstance(v, CategoricalDist) else CategoricalDist.of(v)
            for k, v in self.predictions.items()
        }
        object.__setattr__(self, "predictions", preds)
        object.__setattr__(self, "truth", dict(self.truth or {}))


def dummy_prior(spec: Union[LabelSpec, str], model: Model) -> CategoricalDist:
    """Output of the dummy classifier attached to a label without predictions."""
    name = spec if isinstance(spec, str) else spec.name
    size = model.spec(name).size
    configured = model.priors.get(name)
    return configured if configured is not None else CategoricalDist.uniform(size)


def label_priors(model: Model, obs: Observation) -> list:
    """Calibrated classifier output per label, in model label order.

    Labels without a prediction get the dummy prior; the calibrator is applied
    to real predictions only.
    """
    out = []
    for spec in model.labels:
        raw = obs.predictions.get(spec.name)
        if raw is None:
            out.append(dummy_prior(spec, model).as_array())
        else:
            out.append(calibrate(raw, model.calibrators.get(spec.name)).as_array())
    return out


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    location: str
    message: str

    def __str__(self):
        return f"{self.location}: {self.message}"


def validate_model(model: Model) -> list:
    """Every invariant violation of ``model``; an empty list means valid."""
    out = []
    names = {}
    for i, spec in enumerate(model.labels):
        where = f"labels[{i}] ({spec.name!r})"
        if spec.name in names:
            out.append(Violation(where, f"duplicate label name {spec.name!r} (also labels[{names[spec.name]}])"))
        else:
            names[spec.name] = i
        if len(spec.categories) < 2:
            out.append(Violation(where, "a label needs at least 2 categories"))
        seen = set()
        for cat in spec.categories:
            if cat in seen:
                out.append(Violation(where, f"duplicate category {cat!r}"))
            seen.add(cat)
    sizes = {spec.name: spec.size for spec in model.labels}
    cats = {spec.name: set(spec.categories) for spec in model.labels}

    for k, rule in enumerate(model.rules):
        where = f"rules[{k}]"
        if isinstance(rule, FormulaRule):
            if not (0.0 <= rule.p <= 1.0) or math.isnan(rule.p):
                out.append(Violation(where, f"p={rule.p!r} outside [0, 1]"))
            for atom in fm.atoms(rule.expr):
                if atom.label not in cats:
                    out.append(Violation(where, f"atom references unknown label {atom.label!r}"))
                elif atom.category not in cats[atom.label]:
                    out.append(
                        Violation(where, f"atom references unknown category {atom.label}={atom.category}")
                    )
        elif isinstance(rule, NoisyOrRule):
            for label, row in rule.q.items():
                if label not in sizes:
                    out.append(Violation(where, f"q references unknown label {label!r}"))
                    continue
                if len(row) != sizes[label]:
                    out.append(
                        Violation(where, f"q[{label!r}] has {len(row)} entries, label has {sizes[label]}")
                    )
                spec = model.labels[names[label]]
                for m, x in enumerate(row):
                    low_ok = x >= 0.0 if rule.crisp else x > 0.0
                    if not (low_ok and x <= 1.0):
                        cat = spec.categories[m] if m < spec.size else f"#{m}"
                        bound = "[0, 1]" if rule.crisp else "(0, 1]"
                        out.append(Violation(f"{where} q[{label!r}][{cat!r}]", f"value {x!r} outside {bound}"))
        else:
            out.append(Violation(where, f"unknown rule type {type(rule).__name__}"))

    for label, dist in model.priors.items():
        if label not in sizes:
            out.append(Violation(f"priors[{label!r}]", "unknown label"))
        elif len(dist) != sizes[label]:
            out.append(Violation(f"priors[{label!r}]", f"length {len(dist)} != {sizes[label]}"))
    for label in model.calibrators:
        if label not in sizes:
            out.append(Violation(f"calibration[{label!r}]", "unknown label"))
    return out


def validate_observation(model: Model, obs: Observation) -> list:
    out = []
    sizes = {spec.name: spec for spec in model.labels}
    for label, dist in obs.predictions.items():
        if label not in sizes:
            out.append(Violation(f"{obs.id}: predictions[{label!r}]", "unknown label"))
        elif len(dist) != sizes[label].size:
            out.append(
                Violation(f"{obs.id}: predictions[{label!r}]", f"length {len(dist)} != {sizes[label].size}")
            )
    for label, cat in obs.truth.items():
        if label not in sizes:
            out.append(Violation(f"{obs.id}: truth[{label!r}]", "unknown label"))
        elif cat not in sizes[label].categories:
            out.append(Violation(f"{obs.id}: truth[{label!r}]", f"unknown category {cat!r}"))
    return out
