"""Command-line interface: ``prsl <command> ...``.

Exit codes: 0 success, 2 invalid input, 3 infeasible query (engine guard,
contradictory evidence, unsolvable prior), 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor

from .errors import (
    BetaSolveError,
    ContradictionError,
    EngineInfeasibleError,
    ModelValidationError,
    NumericError,
    PRSLError,
)
from .evaluation import hamming_loss, joint_accuracy, labelwise_loglik, median_loglik
from .exact import ExactEngine
from .io import load_model, read_dataset, save_model, write_dataset
from .learning import RegularizationConfig, TrainConfig, train
from .loopy import BPOptions, build_factor_graph, max_product, sum_product
from .simulation import SimConfig, approx_quality_experiment, generate_model, generate_observations, parse_size

log = logging.getLogger("prsl")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4


def _open_out(path):
    if path in (None, "-"):
        return _Stdout()
    return open(path, "w", encoding="utf-8", newline="")


class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        sys.stdout.flush()
        return False


def _add_bp_flags(p):
    g = p.add_argument_group("loopy belief propagation")
    g.add_argument("--damping", type=float, default=0.5, help="message damping factor in [0, 1) (default 0.5)")
    g.add_argument("--tol", type=float, default=1e-6, help="convergence tolerance on messages (default 1e-6)")
    g.add_argument("--max-iters", type=int, default=200, help="iteration cap (default 200)")


def _bp_opts(args) -> BPOptions:
    try:
        return BPOptions(args.damping, args.tol, args.max_iters)
    except ValueError as exc:
        raise ModelValidationError([str(exc)]) from None


def _add_threads(p):
    p.add_argument("--threads", type=int, default=1, help="worker threads; output order is unaffected (default 1)")


# ---------------------------------------------------------------------------
# predict


def _predict_one(model, obs, args, opts):
    rec = {"id": obs.id}
    if args.engine == "exact":
        post = ExactEngine(model, obs).query()
        if args.query in ("mpe", "both"):
            assignment, prob = post.argmax()
            rec["mpe"] = assignment
            rec["mpe_prob"] = prob
        if args.query in ("marginal", "both"):
            margs = post.marginals()
            rec["marginals"] = {
                s.name: {c: float(p) for c, p in zip(s.categories, margs[s.name])} for s in model.labels
            }
        truth = {k: v for k, v in obs.truth.items() if v is not None}
        if truth and len(truth) == len(model.labels):
            p = post.prob(truth)
            rec["joint_loglik"] = math.log(p) if p > 0 else None
        return rec
    graph = build_factor_graph(model, obs)
    converged = True
    if args.query in ("mpe", "both"):
        res = max_product(graph, opts)
        rec["mpe"] = res.assignment
        converged &= res.converged
    if args.query in ("marginal", "both"):
        res = sum_product(graph, opts)
        if res.numeric_warning:
            log.warning("observation %s: messages collapsed numerically", obs.id)
        rec["marginals"] = {
            s.name: {c: float(p) for c, p in zip(s.categories, res.beliefs[s.name])} for s in model.labels
        }
        converged &= res.converged
    rec["converged"] = bool(converged)
    return rec


def cmd_predict(args):
    model = load_model(args.model)
    data = read_dataset(args.data, model)
    opts = _bp_opts(args)

    def run(obs):
        return _predict_one(model, obs, args, opts)

    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            records = list(pool.map(run, data))
    else:
        records = [run(o) for o in data]
    with _open_out(args.out) as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    n_nc = sum(1 for r in records if r.get("converged") is False)
    if n_nc:
        log.warning("%d of %d observations did not converge", n_nc, len(records))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _pair(text, name):
    try:
        a, b = (float(x) for x in text.split(","))
        return a, b
    except ValueError:
        raise ModelValidationError([f"--{name} expects two comma-separated numbers, got {text!r}"]) from None


def _train_config(args, n_rules) -> TrainConfig:
    settings = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                settings = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ModelValidationError([f"{args.config}: invalid JSON ({exc})"]) from None
    reg_settings = dict(settings.pop("reg", {}))
    bp_settings = dict(settings.pop("bp", {}))
    settings.pop("n_rules", None)
    # explicit flags override the config file
    flag_map = {
        "epochs": "epochs", "batch_size": "batch_size", "lr": "learning_rate", "adam_beta1": "adam_beta1",
        "adam_beta2": "adam_beta2", "adam_eps": "adam_eps", "seed": "seed", "engine": "engine",
        "threads": "threads",
    }
    for flag, key in flag_map.items():
        value = getattr(args, flag)
        if value is not None:
            settings[key] = value
    for flag, key in {"alpha": "alpha", "j0": "j0", "reg_eps": "eps", "lam": "lam"}.items():
        value = getattr(args, flag)
        if value is not None:
            reg_settings[key] = value
    if args.beta:
        reg_settings["beta"] = _pair(args.beta, "beta")
    if args.gamma:
        reg_settings["gamma"] = _pair(args.gamma, "gamma")
    for key in ("beta", "gamma"):
        if key in reg_settings and reg_settings[key] is not None:
            reg_settings[key] = tuple(reg_settings[key])
    for flag, key in {"damping": "damping", "tol": "tol", "max_iters": "max_iters"}.items():
        value = getattr(args, flag)
        if value is not None:
            bp_settings[key] = value
    try:
        return TrainConfig(
            n_rules=n_rules,
            reg=RegularizationConfig(**reg_settings),
            bp=BPOptions(**bp_settings),
            **settings,
        )
    except (TypeError, ValueError) as exc:
        raise ModelValidationError([f"invalid training configuration: {exc}"]) from None


def cmd_train(args):
    base = load_model(args.labels)
    train_data = read_dataset(args.train, base)
    val_data = read_dataset(args.val, base) if args.val else None
    try:
        counts = [int(x) for x in str(args.rules).split(",")]
    except ValueError:
        raise ModelValidationError([f"--rules expects integers, got {args.rules!r}"]) from None
    if any(c < 0 for c in counts):
        raise ModelValidationError(["--rules must be non-negative"])
    if not train_data:
        raise ModelValidationError([f"{args.train}: no observations"])

    results = []
    for k in counts:
        cfg = _train_config(args, k)
        cfg.reg.resolve()
        res = train(train_data, base, cfg, val_data)
        key = "val_objective" if val_data else "train_objective"
        score = res.history[res.best_epoch][key]
        results.append((k, res, score))
        log.info("K=%d best epoch %d, %s %.6g", k, res.best_epoch, key, score)
    best = max(range(len(results)), key=lambda i: (results[i][2] if not math.isnan(results[i][2]) else -math.inf, -i))
    k_best, res_best, _ = results[best]
    save_model(res_best.model, args.out_model)
    if args.history:
        with _open_out(args.history) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["K", "epoch", "train_objective", "val_objective", "reg_penalty", "selected"])
            for k, res, _ in results:
                for row in res.history:
                    selected = int(k == k_best and row["epoch"] == res.best_epoch)
                    w.writerow([k, row["epoch"], repr(row["train_objective"]), repr(row["val_objective"]),
                                repr(row["reg_penalty"]), selected])
    print(f"selected K={k_best} (epoch {res_best.best_epoch})", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / approx-check


def cmd_simulate(args):
    cfg = SimConfig(args.labels, args.rules, args.n, args.seed)
    model = generate_model(cfg)
    save_model(model, args.out_model)
    write_dataset(generate_observations(model, args.n, args.seed), args.out_data)
    return EXIT_OK


def cmd_approx_check(args):
    try:
        sizes = [parse_size(s) for s in args.sizes.split(",")]
    except ValueError as exc:
        raise ModelValidationError([str(exc)]) from None
    report = approx_quality_experiment(sizes, args.reps, args.n, args.seed, _bp_opts(args), args.threads)
    with _open_out(args.out) as fh:
        fh.write(report.to_csv())
    for msg in report.skipped:
        print(msg, file=sys.stderr)
    for size, med in report.medians().items():
        print(f"{size}: median correlation {med['correlation']:.4f}, max-product MPE match "
              f"{med['mpe_match_joint']:.3f}, marginal-argmax match {med['mpe_match_marginal']:.3f}",
              file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _read_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ModelValidationError([f"{path}:{lineno}: {exc}"]) from None
    return out


def cmd_eval(args):
    preds = _read_jsonl(args.predictions)
    data = read_dataset(args.data)
    truth_by_id = {o.id: o.truth for o in data}
    missing = [p.get("id") for p in preds if p.get("id") not in truth_by_id]
    if missing:
        raise ModelValidationError([f"predictions without a matching observation: {missing[:5]}"])
    truths = [truth_by_id[p["id"]] for p in preds]
    report = {"n_predictions": len(preds)}
    if all("mpe" in p for p in preds):
        mpes = [p["mpe"] for p in preds]
        acc = joint_accuracy(mpes, truths)
        ham = hamming_loss(mpes, truths)
        report["joint_accuracy"] = acc.value
        report["joint_accuracy_skipped"] = acc.skipped
        report["hamming_loss"] = ham.value
        report["hamming_loss_skipped"] = ham.skipped
    if all("marginals" in p for p in preds):
        values = []
        for p, truth in zip(preds, truths):
            if not truth:
                continue
            margs = {k: list(v.values()) for k, v in p["marginals"].items()}
            cats = {k: list(v.keys()) for k, v in p["marginals"].items()}
            values.append(labelwise_loglik(margs, truth, cats))
        if values:
            report["median_loglik_labelwise"] = median_loglik(values)
    joint = [p["joint_loglik"] for p in preds if "joint_loglik" in p]
    if joint:
        report["median_loglik_joint"] = median_loglik([-math.inf if v is None else v for v in joint])
    report["note"] = (
        "observations with partial truth are excluded from joint accuracy and scored on their "
        "known labels only in Hamming loss"
    )
    text = json.dumps(report, indent=2, default=lambda v: None)
    text = text.replace("-Infinity", "null").replace("NaN", "null")
    with _open_out(args.out) as fh:
        fh.write(text + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prsl",
        description="Probabilistic rule stacking: inference, learning and simulation.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", help="marginal or MPE queries for every observation of a dataset")
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--data", required=True, help="observations, JSON lines")
    p.add_argument("--query", choices=("marginal", "mpe", "both"), default="marginal",
                   help="query type (default marginal)")
    p.add_argument("--engine", choices=("exact", "loopy"), default="exact", help="inference engine (default exact)")
    p.add_argument("--out", default="-", help="output JSON lines (default stdout)")
    _add_bp_flags(p)
    _add_threads(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("train", help="learn noisy-or rules from labelled observations")
    p.add_argument("--labels", required=True,
                   help="model JSON giving labels, priors, calibration and fixed formula rules")
    p.add_argument("--train", required=True, help="training observations, JSON lines")
    p.add_argument("--val", help="validation observations, JSON lines")
    p.add_argument("--rules", default="3", help="number of rules K, or a comma list to sweep (default 3)")
    p.add_argument("--config", help="JSON file with TrainConfig fields (flags take precedence)")
    p.add_argument("--epochs", type=int, help="training epochs (default 20)")
    p.add_argument("--batch-size", type=int, help="batch size (default 32)")
    p.add_argument("--lr", type=float, help="ADAM learning rate (default 0.01)")
    p.add_argument("--adam-beta1", type=float, help="ADAM first-moment decay (default 0.9)")
    p.add_argument("--adam-beta2", type=float, help="ADAM second-moment decay (default 0.999)")
    p.add_argument("--adam-eps", type=float, help="ADAM epsilon (default 1e-8)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--engine", choices=("exact", "loopy"), help="engine for gradient queries (default exact)")
    p.add_argument("--alpha", type=float, help="soft-minimum hardness (default 20)")
    p.add_argument("--j0", type=int, help="maximum labels per rule (default 5)")
    p.add_argument("--reg-eps", type=float, help="log guard of the regularizer (default 1e-4)")
    p.add_argument("--lam", type=float, help="regularizer decay per step (default 0.98)")
    p.add_argument("--beta", help="Beta prior parameters 'b1,b2', both in (0, 1)")
    p.add_argument("--gamma", help="prior tail masses 'g0,g1' below 0.1 and above 0.9 (default 0.1,0.6)")
    p.add_argument("--out-model", required=True, help="where to write the learned model JSON")
    p.add_argument("--history", help="per-epoch history CSV")
    g = p.add_argument_group("loopy belief propagation")
    g.add_argument("--damping", type=float, help="message damping factor (default 0.5)")
    g.add_argument("--tol", type=float, help="convergence tolerance (default 1e-6)")
    g.add_argument("--max-iters", type=int, help="iteration cap (default 200)")
    p.add_argument("--threads", type=int, help="worker threads for per-observation gradients (default 1)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="random model and Dirichlet classifier outputs")
    p.add_argument("--labels", type=int, required=True, help="number of labels")
    p.add_argument("--rules", type=int, required=True, help="number of noisy-or rules")
    p.add_argument("--n", type=int, required=True, help="number of observations")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out-model", required=True, help="model JSON output")
    p.add_argument("--out-data", required=True, help="dataset JSON-lines output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("approx-check", help="loopy BP versus exact inference on simulated models")
    p.add_argument("--sizes", default="5x5", help="comma list of <labels>x<rules> (default 5x5)")
    p.add_argument("--reps", type=int, default=10, help="replications per size (default 10)")
    p.add_argument("--n", type=int, default=100, help="observations per replication (default 100)")
    p.add_argument("--seed", type=int, default=0, help="base seed; replication r uses seed + r (default 0)")
    p.add_argument("--out", default="-", help="CSV report (default stdout)")
    _add_bp_flags(p)
    _add_threads(p)
    p.set_defaults(func=cmd_approx_check)

    p = sub.add_parser("eval", help="score a predictions file against truth labels")
    p.add_argument("--predictions", required=True, help="JSON lines written by 'predict'")
    p.add_argument("--data", required=True, help="dataset with truth, JSON lines")
    p.add_argument("--out", default="-", help="JSON metrics report (default stdout)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (EngineInfeasibleError, ContradictionError, BetaSolveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ModelValidationError, PRSLError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
