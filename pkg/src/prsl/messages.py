"""Factor-to-variable messages for single factors.

Two routes compute the same sum-product message of a noisy-or factor: the
product-form shortcut (linear in scope size and categories) and brute-force
enumeration of the factor table. The enumeration also serves max-product and
tabulated formula factors.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import EngineInfeasibleError, NumericError

#: largest number of joint states of the non-target scope an enumeration visits
ENUMERATION_GUARD = 10**5


def _normalized(msg):
    total = msg.sum()
    if not total > 0 or not np.isfinite(total):
        raise NumericError(f"factor message collapsed to {msg!r}")
    return msg / total


def noisy_or_message(q_target, q_others: Sequence, incoming: Sequence, evidence: int = 1,
                     const: float = 1.0, mode: str = "sum") -> np.ndarray:
    """Product-form noisy-or message to one variable.

    With S_v = sum_m mu_v(m) q_v(m) (``mode="sum"``) or max_m mu_v(m) q_v(m)
    (``mode="max"``, valid for R = 0 only) and P = const * prod_v S_v::

        R = 1:  msg(m) ∝ 1 - q_target(m) * P
        R = 0:  msg(m) ∝ q_target(m) * P

    ``const`` is the product of inhibition probabilities of clamped labels.
    """
    if mode == "max" and evidence == 1:
        raise ValueError("max-product noisy-or messages with R = 1 have no product form")
    reduce = np.sum if mode == "sum" else np.max
    p = const
    for q_v, mu_v in zip(q_others, incoming):
        p *= float(reduce(np.asarray(mu_v) * np.asarray(q_v)))
    q_target = np.asarray(q_target, dtype=float)
    msg = 1.0 - q_target * p if evidence == 1 else q_target * p
    return _normalized(msg)


def noisy_or_tensor(q_rows: Sequence, evidence: int = 1, const: float = 1.0) -> np.ndarray:
    """Dense factor table P(R = evidence | scope) of a noisy-or gate."""
    p_off = np.asarray(const, dtype=float)
    for row in q_rows:
        p_off = np.multiply.outer(p_off, np.asarray(row, dtype=float))
    return 1.0 - p_off if evidence == 1 else p_off


def factor_message_enumerate(factor: np.ndarray, target: int, incoming: Sequence, mode: str = "sum") -> np.ndarray:
    """Message from a tabulated factor to the variable on axis ``target``.

    ``incoming[i]`` is the variable-to-factor message along axis ``i``; the
    entry for the target axis is ignored. Sums (or maximizes) the factor times
    the incoming messages over every joint state of the other axes.
    """
    factor = np.asarray(factor, dtype=float)
    others = [i for i in range(factor.ndim) if i != target]
    n_states = int(np.prod([factor.shape[i] for i in others])) if others else 1
    if n_states > ENUMERATION_GUARD:
        raise EngineInfeasibleError(
            f"factor enumeration needs {n_states} states (> {ENUMERATION_GUARD})"
        )
    weighted = factor
    for i in others:
        shape = [1] * factor.ndim
        shape[i] = factor.shape[i]
        weighted = weighted * np.asarray(incoming[i], dtype=float).reshape(shape)
    if others:
        weighted = (np.sum if mode == "sum" else np.max)(weighted, axis=tuple(others))
    return _normalized(np.asarray(weighted, dtype=float))
