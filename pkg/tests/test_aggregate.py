import pytest
from hypothesis import given
from hypothesis import strategies as st

from compalign.aggregate import (
    AggregationPolicy,
    EmptyGroupRule,
    aggregate,
    coarse_grained_score,
    fine_grained_score,
    overall_score,
)
from compalign.core import DegeneracyFlag, QuestionKind, QuestionScore
from compalign.errors import InputError
from reference import literal_scores

unit = st.floats(0.0, 1.0, allow_nan=False)
ZERO = AggregationPolicy(EmptyGroupRule.SCORE_ZERO)


def qs(kind, values):
    return [QuestionScore(f"{kind.value} {i}", kind, v) for i, v in enumerate(values)]


def test_fine_examples():
    assert fine_grained_score([0.8, 0.6], [0.4]) == 0.55
    assert fine_grained_score([1, 1], [1]) == 1.0
    assert fine_grained_score([0.5], []) == 0.5
    assert fine_grained_score([], [0.25]) == 0.25
    assert fine_grained_score([], []) is None


def test_fine_score_zero_policy():
    assert fine_grained_score([0.5], [], ZERO) == 0.25
    assert fine_grained_score([], [0.5], ZERO) == 0.25
    assert fine_grained_score([], [], ZERO) == 0.0


def test_coarse_examples():
    assert coarse_grained_score([1.0, 0.5, 0.0]) == 0.5
    assert coarse_grained_score([0.37]) == 0.37
    assert coarse_grained_score([0, 0]) == 0
    with pytest.raises(InputError):
        coarse_grained_score([])


def test_overall_examples():
    assert overall_score(0.55, 0.75) == 0.65
    assert overall_score(0.3, 0.3) == 0.3
    assert overall_score(None, 0.8) == 0.8


@pytest.mark.parametrize("bad", [-0.01, 1.01, float("nan"), float("inf")])
def test_out_of_range_scores_rejected(bad):
    with pytest.raises(InputError):
        fine_grained_score([bad], [0.5])
    with pytest.raises(InputError):
        coarse_grained_score([bad])


def test_aggregate_flags_and_fallback():
    r = aggregate("p", "img", [], [], qs(QuestionKind.GLOBAL, [0.8]))
    assert r.fine_grained is None and r.overall == 0.8
    assert {DegeneracyFlag.NO_ENTITY_QUESTIONS, DegeneracyFlag.NO_RELATIONAL_QUESTIONS} <= r.degeneracy_flags
    r = aggregate("p", "img", qs(QuestionKind.ENTITY, [0.5]), [], qs(QuestionKind.GLOBAL, [1.0]), ZERO)
    assert r.fine_grained == 0.25 and r.overall == 0.625 and r.policy == "score_zero"


def test_policy_descriptions_differ():
    assert AggregationPolicy().description != ZERO.description
    assert AggregationPolicy("score_zero") == ZERO
    with pytest.raises(ValueError):
        AggregationPolicy("average_everything")


@given(st.lists(unit, max_size=20), st.lists(unit, max_size=20), st.lists(unit, min_size=1, max_size=20),
       st.sampled_from(list(EmptyGroupRule)))
def test_matches_exact_reference(e, r, g, rule):
    fine = fine_grained_score(e, r, AggregationPolicy(rule))
    coarse = coarse_grained_score(g)
    assert (fine, coarse, overall_score(fine, coarse)) == literal_scores(e, r, g, rule.value)


@given(st.lists(unit, max_size=20), st.lists(unit, max_size=20), st.lists(unit, min_size=1, max_size=20))
def test_bounds(e, r, g):
    fine = fine_grained_score(e, r)
    coarse = coarse_grained_score(g)
    for v in (fine, coarse, overall_score(fine, coarse)):
        assert v is None or 0.0 <= v <= 1.0


@given(st.lists(unit, max_size=20), st.lists(unit, max_size=20), st.lists(unit, min_size=1, max_size=20),
       st.randoms(use_true_random=False))
def test_permutation_invariance(e, r, g, rng):
    shuffled = [list(x) for x in (e, r, g)]
    for x in shuffled:
        rng.shuffle(x)
    assert fine_grained_score(e, r) == fine_grained_score(shuffled[0], shuffled[1])
    assert coarse_grained_score(g) == coarse_grained_score(shuffled[2])


@given(st.integers(1, 10).flatmap(lambda n: st.tuples(st.lists(unit, min_size=n, max_size=n),
                                                      st.lists(unit, min_size=n, max_size=n))))
def test_equal_group_sizes_give_plain_mean(pair):
    e, r = pair
    from fractions import Fraction

    plain = sum(Fraction(x) for x in e + r) / len(e + r)
    assert fine_grained_score(e, r) == float(plain)


@given(st.lists(unit, min_size=1, max_size=10), st.lists(unit, min_size=1, max_size=10),
       st.lists(unit, min_size=1, max_size=10), st.data())
def test_monotone_in_each_score(e, r, g, data):
    group = data.draw(st.sampled_from(["e", "r", "g"]))
    lists = {"e": list(e), "r": list(r), "g": list(g)}
    i = data.draw(st.integers(0, len(lists[group]) - 1))
    bumped = {k: list(v) for k, v in lists.items()}
    bumped[group][i] = data.draw(st.floats(lists[group][i], 1.0))

    def scores(d):
        fine = fine_grained_score(d["e"], d["r"])
        coarse = coarse_grained_score(d["g"])
        return fine, coarse, overall_score(fine, coarse)

    assert all(b >= a for a, b in zip(scores(lists), scores(bumped)))
