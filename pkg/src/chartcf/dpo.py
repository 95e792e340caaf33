"""Preference-loss reference math over caller-supplied log-probabilities.

Both the text-level and image-level losses share one functional form: a
logistic loss on the difference of policy-vs-reference log-ratios, scaled
by a temperature beta.  This module is the numerical ground truth a trainer
integration must match; it never touches tokens or models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import NonFiniteError

# Temperature used by CLI/demo paths when a record does not carry one.
DEFAULT_BETA = 0.1


@dataclass(frozen=True)
class LossInput:
    """The four sequence-level log-probabilities entering one loss term.

    For the text loss the chosen/rejected legs are (A_o | I_o, Q) vs
    (A_c | I_o, Q); for the image loss they are (A_o | I_o, Q) vs
    (A_o | I_c, Q).  The math does not care which.
    """

    lp_policy_chosen: float
    lp_ref_chosen: float
    lp_policy_rejected: float
    lp_ref_rejected: float
    beta: float = DEFAULT_BETA

    def validate(self) -> None:
        values = (
            self.lp_policy_chosen,
            self.lp_ref_chosen,
            self.lp_policy_rejected,
            self.lp_ref_rejected,
            self.beta,
        )
        if not all(math.isfinite(v) for v in values):
            raise NonFiniteError(f"non-finite loss input: {self}")
        if self.beta <= 0:
            raise NonFiniteError(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class LossOutput:
    loss: float
    margin: float
    # Partials w.r.t. (lp_policy_chosen, lp_ref_chosen, lp_policy_rejected,
    # lp_ref_rejected), in LossInput field order.
    gradient: tuple[float, float, float, float]


def _softplus(x: float) -> float:
    # log(1 + exp(x)) without overflow for large |x|.
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def dpo_loss(inp: LossInput) -> LossOutput:
    """Evaluate one preference-loss term with its analytic gradient.

    margin = beta * ((lp_policy_chosen - lp_ref_chosen)
                     - (lp_policy_rejected - lp_ref_rejected))
    loss   = -log sigmoid(margin), computed as softplus(-margin).
    """
    inp.validate()
    margin = inp.beta * (
        (inp.lp_policy_chosen - inp.lp_ref_chosen)
        - (inp.lp_policy_rejected - inp.lp_ref_rejected)
    )
    loss = _softplus(-margin)
    # d loss / d margin = -sigmoid(-margin); chain through the +/-beta
    # coefficients of each log-prob.
    s = _sigmoid(-margin)
    g = inp.beta * s
    gradient = (-g, +g, +g, -g)
    return LossOutput(loss=loss, margin=margin, gradient=gradient)


def total_loss(text: LossInput, image: LossInput) -> float:
    """Unweighted sum of the text-level and image-level loss terms."""
    return dpo_loss(text).loss + dpo_loss(image).loss


# Extra loss terms (anchored, symmetric-contrastive, ...) plug in here.
# None ship with the package; callers supply their own formulas.
LossTerm = Callable[[LossInput, LossInput], float]


def combined_loss(
    text: LossInput, image: LossInput, extra_terms: Sequence[LossTerm] = ()
) -> float:
    """total_loss plus any caller-supplied variant terms."""
    total = total_loss(text, image)
    for term in extra_terms:
        total += term(text, image)
    return total


def finite_diff_check(inp: LossInput, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central differences.

    Perturbs each of the four log-prob coordinates by +/-h and compares
    against the analytic partials; the relative error denominator is
    max(1, |analytic|) so near-zero gradients are judged absolutely.
    """
    if not (h > 0):
        raise NonFiniteError(f"step must be positive, got {h}")
    out = dpo_loss(inp)
    fields = (
        "lp_policy_chosen",
        "lp_ref_chosen",
        "lp_policy_rejected",
        "lp_ref_rejected",
    )
    worst = 0.0
    for i, name in enumerate(fields):
        base = getattr(inp, name)
        plus = dpo_loss(_replace(inp, name, base + h)).loss
        minus = dpo_loss(_replace(inp, name, base - h)).loss
        numeric = (plus - minus) / (2.0 * h)
        analytic = out.gradient[i]
        err = abs(analytic - numeric) / max(1.0, abs(analytic))
        worst = max(worst, err)
    return worst


def _replace(inp: LossInput, field: str, value: float) -> LossInput:
    values = {
        "lp_policy_chosen": inp.lp_policy_chosen,
        "lp_ref_chosen": inp.lp_ref_chosen,
        "lp_policy_rejected": inp.lp_policy_rejected,
        "lp_ref_rejected": inp.lp_ref_rejected,
    }
    values[field] = value
    return LossInput(beta=inp.beta, **values)
