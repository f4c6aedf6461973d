import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from compalign.core import (
    Box,
    BoxKind,
    BoxSet,
    Category,
    DegeneracyFlag,
    EvalResult,
    PromptRecord,
    Question,
    QuestionKind,
    QuestionScore,
    QuestionSet,
    ScoreMatrix,
    dumps,
    row_best,
    validate_prompt_set,
    whole_image_box,
)
from compalign.errors import InputError, SchemaError

unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
words = st.text(alphabet="abcdefghij ", min_size=1, max_size=12).filter(lambda s: s.strip())


def roundtrip(obj):
    data = json.loads(dumps(obj.to_dict()))
    return type(obj).from_dict(data)


@st.composite
def boxes(draw, limit=500):
    x0 = draw(st.integers(0, limit - 1))
    y0 = draw(st.integers(0, limit - 1))
    x1 = draw(st.integers(x0 + 1, limit))
    y1 = draw(st.integers(y0 + 1, limit))
    return Box(x0, y0, x1, y1, label=draw(st.sampled_from(["", "cat", "dog"])), confidence=draw(unit))


@st.composite
def questions(draw, kind):
    n_subjects = {QuestionKind.ENTITY: st.integers(0, 1), QuestionKind.RELATIONAL: st.sampled_from([0, 2, 3])}
    n = draw(n_subjects.get(kind, st.just(0)))
    return Question(draw(words), kind, None, tuple(draw(words) for _ in range(n)))


@st.composite
def question_sets(draw):
    return QuestionSet(
        draw(words),
        tuple(draw(st.lists(words, max_size=3))),
        tuple(draw(st.lists(questions(QuestionKind.ENTITY), max_size=3))),
        tuple(draw(st.lists(questions(QuestionKind.RELATIONAL), max_size=3))),
        tuple(draw(st.lists(questions(QuestionKind.GLOBAL), min_size=1, max_size=3))),
    )


def test_validate_prompt_set_flags_duplicates_and_range():
    recs = [PromptRecord("p1", "a cat"), PromptRecord("p1", "a dog")]
    assert any("duplicate id 'p1'" in v for v in validate_prompt_set(recs))
    assert any("out of range" in v for v in validate_prompt_set([PromptRecord("p2", "x", human_score=1.3)]))
    good = [PromptRecord(f"p{i}", "a red cube", Category.COLOR, 0.5) for i in range(3)]
    assert validate_prompt_set(good) == []


def test_validate_prompt_set_flags_empty_text():
    assert validate_prompt_set([PromptRecord("p", "  ")])


def test_question_subject_arity():
    with pytest.raises(InputError):
        Question("Is the cat on the mat?", QuestionKind.RELATIONAL, subject_entities=("cat",))
    with pytest.raises(InputError):
        Question("Is this cat black?", QuestionKind.ENTITY, subject_entities=("cat", "dog"))
    with pytest.raises(InputError):
        Question("   ", QuestionKind.GLOBAL)
    # unresolved relational subjects are allowed
    Question("Is the cat on the mat?", QuestionKind.RELATIONAL)


def test_question_set_requires_a_global_question():
    with pytest.raises(SchemaError, match="global"):
        QuestionSet("p", (), (Question("Is this cat black?", QuestionKind.ENTITY),))


def test_question_set_checks_kinds_and_assertion_indices():
    g = Question("Is there a cat?", QuestionKind.GLOBAL)
    with pytest.raises(SchemaError):
        QuestionSet("p", (), (g,), (), (g,))
    with pytest.raises(SchemaError, match="assertion_index"):
        QuestionSet("p", ("a cat",), (Question("Is this a cat?", QuestionKind.ENTITY, 1),), (), (g,))


def test_question_set_accepts_plain_global_key():
    d = {"prompt_id": "p", "global": [{"text": "A cat?", "kind": "global"}]}
    assert QuestionSet.from_dict(d).counts == (0, 0, 1)


@pytest.mark.parametrize(
    "coords",
    [(5, 0, 5, 10), (0, 5, 10, 5), (-1, 0, 4, 4), (10, 0, 4, 4)],
)
def test_box_rejects_degenerate_coordinates(coords):
    with pytest.raises(InputError):
        Box(*coords)


def test_box_rejects_fractional_coordinates():
    with pytest.raises(InputError):
        Box(0.5, 0, 4, 4)


def test_relational_box_needs_parents():
    with pytest.raises(InputError):
        Box(0, 0, 4, 4, kind=BoxKind.RELATIONAL)
    assert Box(0, 0, 4, 4, kind=BoxKind.RELATIONAL, parents=(0, 1)).parents == (0, 1)


def test_box_set_rejects_out_of_bounds_boxes():
    with pytest.raises(InputError):
        BoxSet("img", 10, 10, (Box(0, 0, 11, 5),), (whole_image_box(10, 10),))


def test_row_best_prefers_lowest_index_on_ties():
    assert row_best([0.2, 0.9, 0.4]) == (0.9, 1)
    assert row_best([0.7, 0.7]) == (0.7, 0)


def test_score_matrix_shape_and_range():
    regions = (Box(0, 0, 2, 2), Box(1, 1, 3, 3))
    m = ScoreMatrix(("q1", "q2"), regions, ((0.1, 0.8), (0.5, 0.2)))
    assert m.best == ((0.8, 1), (0.5, 0))
    with pytest.raises(InputError):
        ScoreMatrix(("q1",), regions, ((0.1,),))
    with pytest.raises(InputError):
        ScoreMatrix(("q1",), regions, ((0.1, 1.2),))


def test_eval_result_range_checked():
    with pytest.raises(InputError):
        EvalResult("p", "i", 0.5, 1.5, 0.5)
    with pytest.raises(InputError):
        EvalResult("p", "i", math.nan, 0.5, 0.5)


def test_dumps_rejects_nan():
    with pytest.raises(ValueError):
        dumps({"x": math.nan})


@given(st.text(min_size=1).filter(str.strip), st.text(min_size=1).filter(str.strip), st.sampled_from(Category),
       st.none() | unit)
def test_prompt_record_roundtrip(pid, text, cat, human):
    r = PromptRecord(pid, text, cat, human)
    assert roundtrip(r) == r


@given(question_sets())
def test_question_set_roundtrip(qs):
    assert roundtrip(qs) == qs


@given(boxes())
def test_box_roundtrip(b):
    assert roundtrip(b) == b


@given(st.lists(boxes(limit=100), max_size=4))
def test_box_set_roundtrip(entity):
    bs = BoxSet("img", 100, 100, tuple(entity), (whole_image_box(100, 100),), not entity, True)
    assert roundtrip(bs) == bs


@given(st.integers(1, 4), st.integers(1, 4), st.data())
def test_score_matrix_roundtrip(nq, nr, data):
    values = tuple(tuple(data.draw(unit) for _ in range(nr)) for _ in range(nq))
    regions = tuple(data.draw(boxes()) for _ in range(nr))
    m = ScoreMatrix(tuple(f"q{i}" for i in range(nq)), regions, values)
    back = roundtrip(m)
    assert back == m
    assert [v for v, _ in back.best] == [max(row) for row in values]


@given(st.none() | unit, unit, unit, st.lists(unit, max_size=3), st.frozensets(st.sampled_from(DegeneracyFlag)))
def test_eval_result_roundtrip(fine, coarse, overall, scores, flags):
    per_q = tuple(QuestionScore(f"q{i}", QuestionKind.ENTITY, s, 0) for i, s in enumerate(scores))
    r = EvalResult("p", "img", fine, coarse, overall, per_q, flags, "score_zero", Category.SPATIAL)
    assert roundtrip(r) == r
