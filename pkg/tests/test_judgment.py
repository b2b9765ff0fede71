from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mocktrial.domain import DeathPenalty, Judgment, LifeImprisonment, Months, NoCustody, StatutoryRange
from mocktrial.errors import AlignmentError, AllExcluded, EmptyInput, ExtractionFailure, VerdictParseFailure
from mocktrial.judgment import (
    EvalCase,
    align,
    binary_accuracy,
    evaluate,
    extract_judgment,
    fine_pairs,
    format_table,
    format_verdict_block,
    hit_rate,
    is_hit,
    load_prediction_file,
    load_truth_file,
    parse_verdict_block,
    probation_pairs,
    relative_error,
    report_json,
)

from .conftest import FIXTURES

terms = st.one_of(
    st.integers(min_value=0, max_value=300).map(Months),
    st.just(LifeImprisonment()),
    st.just(DeathPenalty()),
    st.just(NoCustody()),
)


@st.composite
def judgments(draw):
    prob = draw(st.sampled_from(["none", "flag", "months"]))
    fine = draw(st.sampled_from(["none", "flag", "amount"]))
    arts = draw(st.lists(st.tuples(st.sampled_from(["中华人民共和国刑法", "刑法"]), st.integers(1, 452)), max_size=3, unique=True))
    return Judgment(
        imprisonment=draw(terms),
        probation_applicable=prob != "none",
        probation_months=draw(st.integers(1, 60)) if prob == "months" else None,
        fine_applicable=fine != "none",
        fine_amount=draw(st.integers(0, 10**7)) if fine == "amount" else None,
        cited_articles=tuple(arts),
    )


@given(judgments(), st.text(max_size=50).filter(lambda s: "===" not in s))
def test_verdict_block_round_trip(j, preamble):
    doc = preamble + "\n" + format_verdict_block(j)
    back = parse_verdict_block(doc)
    assert back.imprisonment == j.imprisonment
    assert (back.probation_applicable, back.probation_months) == (j.probation_applicable, j.probation_months)
    assert (back.fine_applicable, back.fine_amount) == (j.fine_applicable, j.fine_amount)
    assert back.cited_articles == j.cited_articles


def test_verdict_block_last_block_wins_and_failures():
    first = format_verdict_block(Judgment(Months(6)))
    second = format_verdict_block(Judgment(Months(9)))
    assert parse_verdict_block(first + "\n" + second).imprisonment == Months(9)
    with pytest.raises(VerdictParseFailure) as info:
        parse_verdict_block("没有结果块")
    assert info.value.raw == "没有结果块"
    with pytest.raises(VerdictParseFailure):
        parse_verdict_block("===VERDICT===\nPROBATION: 无\n===END===")


def test_contradictory_flag_treated_as_applicable(caplog):
    j = parse_verdict_block("===VERDICT===\nIMPRISONMENT: 12\nPROBATION: 否 12\nFINE: 无\nARTICLES: 无\n===END===")
    assert j.probation_applicable and j.probation_months == 12
    assert "probation" in caplog.text


def test_extract_prefers_block_then_text():
    doc = "判决如下：判处有期徒刑五年。\n" + format_verdict_block(Judgment(Months(14), fine_applicable=True, fine_amount=5000))
    assert extract_judgment(doc).imprisonment == Months(14)
    broken = "判决如下：判处有期徒刑五年。\n===VERDICT===\nIMPRISONMENT: 很久\n===END==="
    assert extract_judgment(broken).imprisonment == Months(60)
    with pytest.raises(ExtractionFailure):
        extract_judgment("判决如下：本案退回补充侦查。")


def test_negated_probation_is_ignored():
    j = extract_judgment("辩护人建议适用缓刑，本院不予适用缓刑。判决如下：判处有期徒刑一年。")
    assert not j.probation_applicable


# -- metrics ------------------------------------------------------------------------------


def case(cid, pred, truth, rng=None):
    return EvalCase(cid, pred, truth, StatutoryRange(*rng) if rng else None)


def test_hit_rules():
    assert is_hit(case("a", Judgment(Months(10)), Judgment(Months(12)), (6, 36)))
    assert not is_hit(case("b", Judgment(Months(40)), Judgment(Months(12)), (6, 36)))
    assert is_hit(case("c", Judgment(LifeImprisonment()), Judgment(LifeImprisonment())))
    assert not is_hit(case("d", Judgment(DeathPenalty()), Judgment(LifeImprisonment())))
    assert not is_hit(case("e", Judgment(Months(180)), Judgment(LifeImprisonment())))
    assert is_hit(case("f", Judgment(NoCustody()), Judgment(Months(3)), (0, 6)))


def test_numeric_truth_requires_range():
    with pytest.raises(ValueError):
        EvalCase("x", Judgment(Months(1)), Judgment(Months(12)))


def test_relative_error_exclusions():
    r = relative_error([(10, 10), (15, 10), (None, 10), (5, 0), (3, None)])
    assert r.n_included == 2 and r.n_excluded == 3
    assert r.mean == pytest.approx(0.25)
    assert r.std == pytest.approx(0.25)
    with pytest.raises(AllExcluded):
        relative_error([(1, 0), (None, 5)])


def test_empty_inputs():
    with pytest.raises(EmptyInput):
        hit_rate([])
    with pytest.raises(EmptyInput):
        binary_accuracy([])
    with pytest.raises(EmptyInput):
        evaluate([])


def test_pair_rules():
    t = Judgment(Months(12), probation_applicable=True, probation_months=24, fine_applicable=True, fine_amount=5000)
    no_fine = Judgment(Months(12), probation_applicable=True)
    unknown_fine = Judgment(Months(12), fine_applicable=True)
    cases = [case("a", no_fine, t, (6, 36)), case("b", unknown_fine, t, (6, 36))]
    assert fine_pairs(cases) == [(0, 5000), (None, 5000)]
    assert probation_pairs(cases) == [(None, None), (None, None)]


@given(st.lists(st.tuples(st.integers(0, 500), st.integers(0, 500)), min_size=1, max_size=40))
def test_relative_error_invariants(pairs):
    if all(t == 0 for _, t in pairs):
        with pytest.raises(AllExcluded):
            relative_error(pairs)
        return
    r = relative_error(pairs)
    assert r.mean >= 0 and r.std >= 0
    assert r.n_included + r.n_excluded == len(pairs)
    assert relative_error(list(reversed(pairs))).mean == pytest.approx(r.mean, rel=1e-12, abs=1e-15)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=50))
def test_binary_accuracy_bounds(flags):
    acc = binary_accuracy(flags)
    assert 0 <= acc <= 1
    assert binary_accuracy([(p, p) for p, _ in flags]) == 1.0


def test_empty_subset_gives_null_relative_error():
    t = Judgment(Months(12))
    report = evaluate([case("a", Judgment(Months(12)), t, (6, 36))])
    assert report.probation.relative_error_mean is None
    assert report.fine.n_excluded == 1
    assert "n/a" in format_table(report)


def test_file_loading_and_alignment(tmp_path):
    preds = load_prediction_file(FIXTURES / "table1" / "predictions.jsonl")
    truths = load_truth_file(FIXTURES / "table1" / "truth.jsonl")
    cases = align(preds, truths)
    assert len(cases) == 200
    del preds["T001"]
    with pytest.raises(AlignmentError):
        align(preds, truths)
    dup = tmp_path / "dup.jsonl"
    dup.write_text('{"case_id": "a", "imprisonment": 1}\n{"case_id": "a", "imprisonment": 2}\n', encoding="utf-8")
    with pytest.raises(ValueError):
        load_prediction_file(dup)


def test_report_json_is_stable():
    cases = align(load_prediction_file(FIXTURES / "table1" / "predictions.jsonl"), load_truth_file(FIXTURES / "table1" / "truth.jsonl"))
    text = report_json(evaluate(cases))
    assert text == report_json(evaluate(cases))
    assert json.loads(text)["n_cases"] == 200
