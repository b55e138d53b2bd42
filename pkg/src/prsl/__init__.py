"""Probabilistic rule stacking: fuse per-label classifier outputs with
probabilistic propositional rules and learn noisy-or rules from data."""
from .exact import (
    EvidenceSpec,
    QueryResult,
    joint_loglik_exact,
    joint_posterior,
    marginal_query_exact,
    mpe_query_exact,
)
from .formula import eval_formula, parse_formula, rule_prob_formula
from .kernels import DEFAULT_BACKEND
from .loopy import BPOptions, build_factor_graph, marginal_query_loopy, max_product, mpe_query_loopy, sum_product
from .model import (
    CategoricalDist,
    FormulaRule,
    LabelSpec,
    Model,
    NoisyOrRule,
    Observation,
    calibrate,
    dummy_prior,
    validate_model,
)
from .noisy_or import decompose_binary, noisy_or_from_disjunction, rule_prob_noisy_or

__version__ = "0.1.0"
