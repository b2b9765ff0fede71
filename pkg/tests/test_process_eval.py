from __future__ import annotations

import csv
import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mocktrial.errors import DegenerateMarginals, LengthMismatch, MissingAnnotation
from mocktrial.process_eval import (
    AnnotationRecord,
    Outcome,
    Preference,
    aggregate,
    average_kappa,
    cohen_kappa,
    fleiss_kappa,
    label_vectors,
    load_catalog,
    majority,
    make_pairs,
    read_annotations,
    read_blinding_keys,
    report,
    report_dict,
    unblind,
    write_blinding_keys,
)

from . import oracles
from .conftest import FIXTURES

S, H, D = Outcome.SIM, Outcome.HUMAN, Outcome.DRAW


def vote_examples_hold() -> bool:
    return majority([S, S, H]) is S and majority([S, H, D]) is D and majority([D, D, S]) is S


def kappa_fixture():
    data = json.loads((FIXTURES / "kappa_confusion.json").read_text(encoding="utf-8"))
    a, b = [], []
    for i, row in enumerate(data["matrix"]):
        for j, count in enumerate(row):
            a += [data["labels"][i]] * count
            b += [data["labels"][j]] * count
    return a, b, Fraction(data["kappa"])


def test_vote_examples():
    assert vote_examples_hold()


def test_votes_through_aggregate():
    """Three annotators, one aspect, sim shown first in P1 and second in P2."""
    keys = {"P1": Preference.FIRST, "P2": Preference.SECOND, "P3": Preference.FIRST}
    prefs = {
        "P1": ["First", "First", "Second"],  # S S H -> Sim
        "P2": ["Second", "First", "Draw"],  # S H D -> Draw
        "P3": ["Draw", "Draw", "First"],  # D D S -> Sim
    }
    recs = [AnnotationRecord(pid, "A01", f"ann{k}", p) for pid, ps in prefs.items() for k, p in enumerate(ps)]
    result = aggregate(recs, keys)
    assert result.outcomes[("P1", "A01")] is S
    assert result.outcomes[("P2", "A01")] is D
    assert result.outcomes[("P3", "A01")] is S
    f = result.aspects["A01"]
    assert (f.sim, f.draw, f.human) == (Fraction(2, 3), Fraction(1, 3), Fraction(0))


@given(st.lists(st.sampled_from([S, H, D]), min_size=1, max_size=9))
def test_majority_ignores_draws_and_is_order_free(votes):
    out = majority(votes)
    assert out is majority(list(reversed(votes)))
    assert out is majority([v for v in votes if v is not D] or [D])


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_fractions_sum_to_one(data):
    n_pairs = data.draw(st.integers(1, 8))
    n_ann = data.draw(st.integers(1, 4))
    keys = {f"P{i}": data.draw(st.sampled_from([Preference.FIRST, Preference.SECOND])) for i in range(n_pairs)}
    recs = [
        AnnotationRecord(pid, aid, f"a{k}", data.draw(st.sampled_from(list(Preference))))
        for pid in keys
        for aid in ("A01", "A02")
        for k in range(n_ann)
    ]
    result = aggregate(recs, keys)
    for f in result.aspects.values():
        assert f.sim + f.draw + f.human == 1


def test_unblind():
    assert unblind(Preference.FIRST, Preference.FIRST) is S
    assert unblind(Preference.FIRST, Preference.SECOND) is H
    assert unblind(Preference.DRAW, Preference.SECOND) is D


def test_missing_annotation():
    keys = {"P1": Preference.FIRST}
    recs = [AnnotationRecord("P1", "A01", "x", "First"), AnnotationRecord("P1", "A02", "y", "First")]
    with pytest.raises(MissingAnnotation):
        aggregate(recs, keys)
    with pytest.raises(MissingAnnotation):
        aggregate([AnnotationRecord("P9", "A01", "x", "First")], keys)


def test_kappa_pinned_fixture():
    a, b, expected = kappa_fixture()
    assert expected == Fraction(85, 162)
    assert oracles.cohen_kappa(a, b) == expected
    assert abs(cohen_kappa(a, b) - float(expected)) < 1e-9


@given(st.lists(st.sampled_from(["First", "Second", "Draw"]), min_size=2, max_size=30), st.data())
def test_kappa_matches_oracle_and_is_symmetric(a, data):
    b = data.draw(st.lists(st.sampled_from(["First", "Second", "Draw"]), min_size=len(a), max_size=len(a)))
    try:
        k = cohen_kappa(a, b)
    except DegenerateMarginals:
        assert len(set(a)) == 1 and set(a) == set(b)
        return
    assert k == pytest.approx(float(oracles.cohen_kappa(a, b)), abs=1e-12)
    assert k == cohen_kappa(b, a)


@given(st.lists(st.sampled_from(["First", "Second", "Draw"]), min_size=2, max_size=30).filter(lambda v: len(set(v)) > 1))
def test_identical_annotators_average_exactly_one(v):
    assert average_kappa({"a": v, "b": list(v), "c": list(v)}) == 1.0
    assert fleiss_kappa({"a": v, "b": list(v)}) == pytest.approx(1.0)


def test_kappa_errors():
    with pytest.raises(LengthMismatch):
        cohen_kappa(["First"], ["First", "Draw"])
    with pytest.raises(DegenerateMarginals):
        cohen_kappa(["Draw"] * 4, ["Draw"] * 4)
    with pytest.raises(LengthMismatch):
        average_kappa({"a": ["First"]})


def test_fleiss_known_value():
    # two raters reduce to Scott's pi: po = 3/4, pooled marginals 1/2 each -> pi = 1/2
    assert fleiss_kappa({"a": ["First", "First", "Second", "Second"], "b": ["First", "First", "Second", "First"]}) == pytest.approx(
        (Fraction(3, 4) - (Fraction(5, 8) ** 2 + Fraction(3, 8) ** 2)) / (1 - (Fraction(5, 8) ** 2 + Fraction(3, 8) ** 2))
    )


def test_catalog_shape():
    cat = load_catalog()
    assert len(cat) == 30
    assert [a.aspect_id for a in cat] == [f"A{i:02d}" for i in range(1, 31)]
    assert {a.stage for a in cat} == {"TrialInvestigation", "EvidencePresentation", "TrialDebate", "Overall"}


def test_pairs_keys_and_files(tmp_path):
    pairs, keys = make_pairs(["s1", "s2", "s3", "s4"], ["h1", "h2", "h3", "h4"], seed=11)
    again, keys2 = make_pairs(["s1", "s2", "s3", "s4"], ["h1", "h2", "h3", "h4"], seed=11)
    assert pairs == again and keys == keys2
    for p in pairs:
        sim = p.record_first if keys[p.pair_id] is Preference.FIRST else p.record_second
        assert sim.startswith("s")
    path = tmp_path / "keys.csv"
    write_blinding_keys(keys, path)
    assert path.read_text(encoding="utf-8").startswith("# SEALED")
    assert read_blinding_keys(path) == keys
    with pytest.raises(LengthMismatch):
        make_pairs(["s"], [], seed=0)


def test_read_annotations_and_report(tmp_path):
    cat = load_catalog()
    keys = {"P001": Preference.FIRST, "P002": Preference.SECOND}
    path = tmp_path / "ann.csv"
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["pair_id", "aspect_id", "annotator_id", "preference"])
        for pid in keys:
            for a in cat:
                for ann, pref in (("x", "First"), ("y", "Second"), ("z", "First")):
                    w.writerow([pid, a.aspect_id, ann, pref])
    recs = read_annotations(path)
    result = aggregate(recs, keys, cat)
    text = report(result, cat)
    assert "[Trial Investigation-Judge]" in text and "[Overall Performance]" in text
    assert text.count("\n") == 1 + 30 + 10
    d = report_dict(result, cat, kappa=None)
    assert json.dumps(d)
    vec = label_vectors(recs)
    assert sorted(vec) == ["x", "y", "z"] and len(vec["x"]) == 60
    unblinded = label_vectors(recs, keys)
    assert set(unblinded["x"]) == {"Sim", "Human"}
    path.write_text("pair_id,aspect_id,annotator_id,preference\nP001,A01,x,Maybe\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_annotations(path)
