"""JSON model files and JSON-lines datasets."""
from __future__ import annotations

import json
from pathlib import Path

from . import formula as fm
from .errors import ModelValidationError, PRSLError
from .model import (
    CategoricalDist,
    FormulaRule,
    IdentityCalibrator,
    LabelSpec,
    Model,
    NoisyOrRule,
    Observation,
    TemperatureCalibrator,
    validate_model,
    validate_observation,
)


def _calibrator_from_json(obj):
    kind = obj.get("type", "identity")
    if kind == "identity":
        return IdentityCalibrator()
    if kind == "temperature":
        return TemperatureCalibrator(obj["T"])
    raise ModelValidationError([f"unknown calibrator type {kind!r}"])


def model_from_json(obj, validate: bool = True) -> Model:
    try:
        labels = [LabelSpec(item["name"], item["categories"]) for item in obj["labels"]]
        rules = []
        for k, item in enumerate(obj.get("rules", [])):
            kind = item.get("type")
            if kind == "formula":
                expr = fm.parse_formula(item["expr"], labels)
                rules.append(FormulaRule(expr, float(item["p"])))
            elif kind == "noisy_or":
                rules.append(NoisyOrRule(item["q"], crisp=bool(item.get("crisp", False))))
            else:
                raise ModelValidationError([f"rules[{k}]: unknown rule type {kind!r}"])
        priors = {name: CategoricalDist.of(p) for name, p in obj.get("priors", {}).items()}
        calibrators = {
            name: _calibrator_from_json(c) for name, c in obj.get("calibration", {}).items()
        }
    except ModelValidationError:
        raise
    except (KeyError, TypeError) as exc:
        raise ModelValidationError([f"malformed model file: missing or bad field {exc}"]) from exc
    except PRSLError as exc:
        raise ModelValidationError([str(exc)]) from exc
    model = Model(labels, rules, priors, calibrators)
    if validate:
        violations = validate_model(model)
        if violations:
            raise ModelValidationError(violations)
    return model


def model_to_json(model: Model) -> dict:
    rules = []
    for rule in model.rules:
        if isinstance(rule, FormulaRule):
            rules.append({"type": "formula", "expr": fm.to_string(rule.expr), "p": rule.p})
        else:
            entry = {"type": "noisy_or", "q": {k: list(v) for k, v in rule.q.items()}}
            if rule.crisp:
                entry["crisp"] = True
            rules.append(entry)
    out = {
        "labels": [{"name": s.name, "categories": list(s.categories)} for s in model.labels],
        "rules": rules,
    }
    if model.priors:
        out["priors"] = {k: list(v.probs) for k, v in model.priors.items()}
    if model.calibrators:
        out["calibration"] = {k: c.to_json() for k, c in model.calibrators.items()}
    return out


def load_model(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelValidationError([f"{path}: invalid JSON ({exc})"]) from exc
    return model_from_json(obj)


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model), indent=2) + "\n", encoding="utf-8")


def observation_from_json(obj) -> Observation:
    return Observation(
        id=str(obj["id"]),
        predictions={k: CategoricalDist.of(v) for k, v in obj.get("predictions", {}).items()},
        truth=obj.get("truth") or {},
    )


def observation_to_json(obs: Observation) -> dict:
    out = {"id": obs.id, "predictions": {k: list(v.probs) for k, v in obs.predictions.items()}}
    if obs.truth:
        out["truth"] = dict(obs.truth)
    return out


def read_dataset(path, model: Model = None) -> list:
    """Read a JSON-lines dataset; with ``model`` every line is validated."""
    out = []
    problems = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obs = observation_from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, PRSLError) as exc:
                problems.append(f"{path}:{lineno}: {exc}")
                continue
            if model is not None:
                problems.extend(f"{path}:{lineno}: {v}" for v in validate_observation(model, obs))
            out.append(obs)
    if problems:
        raise ModelValidationError(problems)
    return out


def write_dataset(observations, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obs in observations:
            fh.write(json.dumps(observation_to_json(obs)) + "\n")
