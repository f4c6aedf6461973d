"""Fine-grained, coarse-grained and overall alignment scores.

fine    = sum(entity)/(2 n_e) + sum(relational)/(2 n_r)
coarse  = sum(global)/n_g
overall = (fine + coarse)/2

Every score is the exact rational value of its formula, rounded once to the
nearest float. Results therefore do not depend on score order, and they agree
bit-for-bit with an evaluation in exact fractions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .core import Category, DegeneracyFlag, EvalResult, QuestionScore
from .errors import InputError


class EmptyGroupRule(str, Enum):
    DROP_TERM_RENORMALIZE = "drop_term_renormalize"
    SCORE_ZERO = "score_zero"


_DESCRIPTIONS = {
    EmptyGroupRule.DROP_TERM_RENORMALIZE: (
        "an empty entity or relational group is dropped and the other group carries the full fine-grained weight"
    ),
    EmptyGroupRule.SCORE_ZERO: "an empty entity or relational group contributes a zero term",
}


@dataclass(frozen=True)
class AggregationPolicy:
    empty_group_rule: EmptyGroupRule = EmptyGroupRule.DROP_TERM_RENORMALIZE

    def __post_init__(self) -> None:
        object.__setattr__(self, "empty_group_rule", EmptyGroupRule(self.empty_group_rule))

    @property
    def policy_id(self) -> str:
        return self.empty_group_rule.value

    @property
    def description(self) -> str:
        return _DESCRIPTIONS[self.empty_group_rule]

    def to_dict(self) -> dict:
        return {"empty_group_rule": self.empty_group_rule.value}


DEFAULT_POLICY = AggregationPolicy()


def _checked(scores: Iterable[float]) -> list[float]:
    out = []
    for s in scores:
        s = float(s)
        if math.isnan(s) or not 0.0 <= s <= 1.0:
            raise InputError(f"score {s!r} outside [0, 1]")
        out.append(s)
    return out


def _exact_sum(values: Sequence[float]) -> tuple[int, int]:
    """(numerator, denominator) of the exact sum; floats are dyadic, so den is a power of two."""
    ratios = [v.as_integer_ratio() for v in values]
    den = max((d for _, d in ratios), default=1)
    return sum(n * (den // d) for n, d in ratios), den


def _mean_of_means(groups: Sequence[Sequence[float]], divisor: int = 1) -> float:
    """sum(mean(g) for g in groups) / divisor, correctly rounded.

    Python's int / int true division rounds correctly, so only one rounding
    happens however many terms there are.
    """
    num, den = 0, 1
    for g in groups:
        n, d = _exact_sum(g)
        d *= len(g)
        num, den = num * d + n * den, den * d
    return num / (den * divisor)


def fine_grained_score(
    entity_scores: Sequence[float],
    relational_scores: Sequence[float],
    policy: AggregationPolicy = DEFAULT_POLICY,
) -> float | None:
    """Equal-weight combination of the entity and relational means.

    Returns None when both groups are empty under drop_term_renormalize.
    """
    e = _checked(entity_scores)
    r = _checked(relational_scores)
    if e and r:
        return _mean_of_means([e, r], 2)
    nonempty = [g for g in (e, r) if g]
    if policy.empty_group_rule is EmptyGroupRule.SCORE_ZERO:
        return _mean_of_means(nonempty, 2) if nonempty else 0.0
    return _mean_of_means(nonempty) if nonempty else None


def coarse_grained_score(global_scores: Sequence[float]) -> float:
    g = _checked(global_scores)
    if not g:
        raise InputError("coarse-grained score needs at least one global question score")
    return _mean_of_means([g])


def overall_score(fine: float | None, coarse: float) -> float:
    """(fine + coarse)/2, or coarse alone when fine is undefined."""
    (coarse,) = _checked([coarse])
    if fine is None:
        return coarse
    (fine,) = _checked([fine])
    return _mean_of_means([[fine], [coarse]], 2)


def aggregate(
    prompt_id: str,
    image_id: str,
    entity: Sequence[QuestionScore],
    relational: Sequence[QuestionScore],
    global_: Sequence[QuestionScore],
    policy: AggregationPolicy = DEFAULT_POLICY,
    flags: Iterable[DegeneracyFlag] = (),
    category: Category = Category.OTHER,
) -> EvalResult:
    flags = set(flags)
    if not entity:
        flags.add(DegeneracyFlag.NO_ENTITY_QUESTIONS)
    if not relational:
        flags.add(DegeneracyFlag.NO_RELATIONAL_QUESTIONS)
    fine = fine_grained_score([q.score for q in entity], [q.score for q in relational], policy)
    coarse = coarse_grained_score([q.score for q in global_])
    return EvalResult(
        prompt_id=prompt_id,
        image_id=image_id,
        fine_grained=fine,
        coarse_grained=coarse,
        overall=overall_score(fine, coarse),
        per_question=tuple(entity) + tuple(relational) + tuple(global_),
        degeneracy_flags=frozenset(flags),
        policy=policy.policy_id,
        category=category,
    )
