from __future__ import annotations

import copy

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mocktrial.domain import AGENT_ROLES, CaseMaterials, EvidenceItem, Role, Stage, TrialTranscript
from mocktrial.errors import IllegalBacktrack, InvalidCase, OutOfTurn, ProcedureError, StageNotFinished
from mocktrial.procedure import (
    ProcedureConfig,
    Refusal,
    StageEnd,
    TrialEnd,
    advance_stage,
    apply_utterance,
    conformance_check,
    next_directive,
    record_reflection,
    request_backtrack,
    start_trial,
)


def make_case(n_pros: int = 2, n_def: int = 1) -> CaseMaterials:
    ev = [EvidenceItem(f"P{i}", f"控方证据{i}", "内容", "prosecution") for i in range(n_pros)]
    ev += [EvidenceItem(f"D{i}", f"辩方证据{i}", "内容", "defense") for i in range(n_def)]
    return CaseMaterials("X1", "盗窃罪", "被告人某某", "公诉机关指控被告人盗窃。", tuple(ev))


def drive(case, config=None, backtrack_to: Stage | None = None, reflect=True):
    """Run the state machine with placeholder utterances; optionally backtrack from the first debate."""
    state = start_trial(case, config)
    while True:
        step = next_directive(state)
        if isinstance(step, TrialEnd):
            advance_stage(state)
            return state
        if isinstance(step, StageEnd):
            if reflect:
                for role in AGENT_ROLES:
                    record_reflection(state, role)
            if backtrack_to is not None and state.stage is Stage.TRIAL_DEBATE and not state.in_excursion:
                if not isinstance(request_backtrack(state, backtrack_to), Refusal):
                    backtrack_to = None
                    continue
            advance_stage(state)
            continue
        apply_utterance(state, step.role, f"{step.role.value}:{step.label}")


def test_default_trial_is_conformant():
    case = make_case()
    state = drive(case)
    assert state.stage is Stage.CONCLUDED
    tr = state.transcript
    assert [s.stage for s in tr.segments] == [
        Stage.TRIAL_PREPARATION, Stage.TRIAL_INVESTIGATION, Stage.EVIDENCE_PRESENTATION, Stage.TRIAL_DEBATE, Stage.FINAL_STATEMENT
    ]
    assert conformance_check(tr, ProcedureConfig(), case) == []
    debate = [u for u in tr.utterances if u.directive_kind == "debate"]
    assert sum(u.role is Role.PROSECUTOR for u in debate) == 3


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 5), st.integers(0, 4), st.integers(0, 4), st.integers(0, 4), st.integers(0, 3),
    st.sampled_from([None, Stage.TRIAL_INVESTIGATION, Stage.EVIDENCE_PRESENTATION]),
)
def test_conformance_over_configurations(rounds, pq, aq, n_pros, n_def, target):
    if n_pros + n_def == 0:
        n_pros = 1
    case = make_case(n_pros, n_def)
    cfg = ProcedureConfig(debate_rounds=rounds, prosecutor_questions=pq, attorney_questions=aq)
    state = drive(case, cfg, backtrack_to=target)
    assert conformance_check(state.transcript, cfg, case) == []
    stages = [s.stage for s in state.transcript.segments]
    assert len(stages) == (7 if target else 5)
    labels = [u.seq for u in state.transcript.utterances]
    assert labels == list(range(len(labels)))


def test_backtrack_budget_and_legality():
    case = make_case()
    state = start_trial(case)
    with pytest.raises(IllegalBacktrack):
        request_backtrack(state, Stage.TRIAL_INVESTIGATION)
    state = drive(case, backtrack_to=Stage.EVIDENCE_PRESENTATION)
    stages = [s.stage for s in state.transcript.segments]
    assert stages[3:6] == [Stage.TRIAL_DEBATE, Stage.EVIDENCE_PRESENTATION, Stage.TRIAL_DEBATE]
    assert state.backtrack_budget == 0
    labels = [u for u in state.transcript.utterances if u.stage is Stage.EVIDENCE_PRESENTATION]
    assert labels


def test_zero_budget_refuses():
    case = make_case()
    state = start_trial(case, ProcedureConfig(backtrack_budget=0))
    while state.stage is not Stage.TRIAL_DEBATE or not isinstance(next_directive(state), StageEnd):
        step = next_directive(state)
        if isinstance(step, StageEnd):
            advance_stage(state)
        else:
            apply_utterance(state, step.role, "x")
    assert isinstance(request_backtrack(state, Stage.TRIAL_INVESTIGATION), Refusal)


def test_out_of_turn_and_unfinished_stage():
    state = start_trial(make_case())
    step = next_directive(state)
    wrong = next(r for r in Role if r is not step.role)
    with pytest.raises(OutOfTurn):
        apply_utterance(state, wrong, "x")
    with pytest.raises(StageNotFinished):
        advance_stage(state)


def test_double_reflection_and_stenographer_rejected():
    state = start_trial(make_case())
    record_reflection(state, Role.JUDGE)
    with pytest.raises(ProcedureError):
        record_reflection(state, Role.JUDGE)
    with pytest.raises(ProcedureError):
        record_reflection(state, Role.STENOGRAPHER)


def test_invalid_case_rejected():
    with pytest.raises(InvalidCase):
        start_trial(CaseMaterials("", "", "", ""))


def test_concluded_trial_rejects_steps():
    state = drive(make_case())
    with pytest.raises(ProcedureError):
        next_directive(state)


@pytest.mark.parametrize("mutation", ["drop-allocution", "drop-reflection", "reorder", "extra-debate"])
def test_conformance_detects_violations(mutation):
    case = make_case()
    tr: TrialTranscript = copy.deepcopy(drive(case).transcript)
    if mutation == "drop-allocution":
        tr.utterances = [u for u in tr.utterances if u.directive_kind != "allocution"]
    elif mutation == "drop-reflection":
        tr.reflection_events = tr.reflection_events[1:]
    elif mutation == "reorder":
        tr.segments[1], tr.segments[2] = tr.segments[2], tr.segments[1]
    else:
        tr.reflection_events.append(tr.reflection_events[0])
    assert conformance_check(tr, ProcedureConfig(), case)


def test_transcript_jsonl_round_trip():
    tr = drive(make_case(), backtrack_to=Stage.TRIAL_INVESTIGATION).transcript
    text = tr.to_jsonl()
    back = TrialTranscript.from_jsonl(text)
    assert back.to_jsonl() == text
    assert back.utterances == tr.utterances
