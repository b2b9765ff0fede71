"""The trial state machine: turn order, stage advancement, backtracking, conformance.

Stage scripts are data (``data/stage_scripts.json`` by default). A script is a
list of blocks; each block is a run of turns repeated ``repeat`` times, where
``repeat`` is 1, an integer, or the name of a round counter primed from the
procedure config. ``for_each`` blocks iterate over one side's evidence items.
Any block or turn may carry ``enabled_by`` naming a boolean config flag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .domain import (
    AGENT_ROLES,
    CaseMaterials,
    EvidenceItem,
    PartySide,
    ReflectionEvent,
    Role,
    Stage,
    StageSegment,
    TrialTranscript,
    Utterance,
    validate_case,
)
from .errors import IllegalBacktrack, InvalidCase, OutOfTurn, ProcedureError, StageNotFinished

BACKTRACK_TARGETS = (Stage.TRIAL_INVESTIGATION, Stage.EVIDENCE_PRESENTATION)


@dataclass(frozen=True)
class Turn:
    role: Role
    kind: str
    hint: str = ""
    enabled_by: str | None = None


@dataclass(frozen=True)
class ScriptBlock:
    turns: tuple[Turn, ...]
    repeat: int | str = 1
    for_each: str | None = None  # "prosecution_evidence" | "defense_evidence"
    enabled_by: str | None = None


@dataclass(frozen=True)
class StageScript:
    stage: Stage
    leader: Role
    turn_plan: tuple[ScriptBlock, ...]

    def __post_init__(self):
        if not self.turn_plan or not any(b.turns for b in self.turn_plan):
            raise ValueError(f"{self.stage.value}: turn_plan must be non-empty")

    def roles(self) -> set[Role]:
        return {t.role for b in self.turn_plan for t in b.turns}


@dataclass(frozen=True)
class ScriptSet:
    stages: dict[Stage, StageScript]
    backtrack: dict[Stage, StageScript]

    def allowed_roles(self, stage: Stage) -> set[Role]:
        roles = set()
        for table in (self.stages, self.backtrack):
            if stage in table:
                roles |= table[stage].roles()
        return roles


def _script_from_dict(stage: Stage, data: dict) -> StageScript:
    blocks = []
    for b in data["blocks"]:
        turns = tuple(
            Turn(Role(t["role"]), t["kind"], t.get("hint", ""), t.get("enabled_by")) for t in b["turns"]
        )
        blocks.append(ScriptBlock(turns, b.get("repeat", 1), b.get("for_each"), b.get("enabled_by")))
    return StageScript(stage, Role(data["leader"]), tuple(blocks))


def load_scripts(path: str | Path | None = None) -> ScriptSet:
    if path is None:
        text = (resources.files("mocktrial") / "data" / "stage_scripts.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text)
    stages = {Stage(k): _script_from_dict(Stage(k), v) for k, v in data["stages"].items()}
    backtrack = {Stage(k): _script_from_dict(Stage(k), v) for k, v in data.get("backtrack", {}).items()}
    missing = [s.value for s in Stage if s is not Stage.CONCLUDED and s not in stages]
    if missing:
        raise ValueError(f"stage scripts missing for {missing}")
    return ScriptSet(stages, backtrack)


_DEFAULT_SCRIPTS: ScriptSet | None = None


def default_scripts() -> ScriptSet:
    global _DEFAULT_SCRIPTS
    if _DEFAULT_SCRIPTS is None:
        _DEFAULT_SCRIPTS = load_scripts()
    return _DEFAULT_SCRIPTS


@dataclass(frozen=True)
class ProcedureConfig:
    debate_rounds: int = 3
    prosecutor_questions: int = 3
    attorney_questions: int = 3
    judge_questioning: bool = True
    judge_interjections: bool = False
    backtrack_budget: int = 1
    scripts: ScriptSet | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.debate_rounds < 1:
            raise ValueError("debate_rounds must be >= 1")
        if min(self.prosecutor_questions, self.attorney_questions, self.backtrack_budget) < 0:
            raise ValueError("question counts and backtrack_budget must be >= 0")
        if self.prosecutor_questions + self.attorney_questions == 0 and not self.judge_questioning:
            raise ValueError("trial investigation would have no turns")

    @property
    def script_set(self) -> ScriptSet:
        return self.scripts or default_scripts()

    def flag(self, name: str) -> bool:
        return bool(getattr(self, name))


@dataclass(frozen=True)
class Directive:
    role: Role
    kind: str
    hint: str
    stage: Stage
    label: str  # unique per (segment, role), e.g. "debate#2"
    subject: str | None = None  # evidence_id for evidence turns
    round: int = 1


@dataclass(frozen=True)
class StageEnd:
    stage: Stage


@dataclass(frozen=True)
class TrialEnd:
    pass


@dataclass(frozen=True)
class Refusal:
    reason: str


@dataclass
class TrialState:
    case: CaseMaterials
    config: ProcedureConfig
    stage: Stage
    transcript: TrialTranscript
    round_counters: dict[tuple[Stage, str], int]
    backtrack_budget: int
    plan: list[Directive] = field(default_factory=list)
    turn_cursor: int = 0
    excursion_return: Stage | None = None
    saved_plan: list[Directive] = field(default_factory=list)
    judgment_given: bool = False

    @property
    def in_excursion(self) -> bool:
        return self.excursion_return is not None

    @property
    def segment_index(self) -> int:
        return len(self.transcript.segments) - 1

    @property
    def pending(self) -> Directive | None:
        return self.plan[self.turn_cursor] if self.turn_cursor < len(self.plan) else None


def _prime_counters(case: CaseMaterials, config: ProcedureConfig) -> dict[tuple[Stage, str], int]:
    return {
        (Stage.TRIAL_INVESTIGATION, "prosecutor_questions"): config.prosecutor_questions,
        (Stage.TRIAL_INVESTIGATION, "attorney_questions"): config.attorney_questions,
        (Stage.TRIAL_INVESTIGATION, "judge_questions"): 1,
        (Stage.EVIDENCE_PRESENTATION, "prosecution_evidence"): len(case.evidence_by(PartySide.PROSECUTION)),
        (Stage.EVIDENCE_PRESENTATION, "defense_evidence"): len(case.evidence_by(PartySide.DEFENSE)),
        (Stage.TRIAL_DEBATE, "debate_rounds"): config.debate_rounds,
    }


class _SafeDict(dict):
    def __missing__(self, key):
        return "{" + key + "}"


def expand_script(
    script: StageScript,
    case: CaseMaterials,
    config: ProcedureConfig,
    counters: dict[tuple[Stage, str], int],
    label_prefix: str = "",
) -> list[Directive]:
    """Flatten a stage script into the ordered directives for one segment."""
    out: list[Directive] = []
    seen: dict[tuple[Role, str], int] = {}
    for block in script.turn_plan:
        if block.enabled_by and not config.flag(block.enabled_by):
            continue
        items: list[EvidenceItem | None]
        if block.for_each:
            side = PartySide.PROSECUTION if block.for_each == "prosecution_evidence" else PartySide.DEFENSE
            items = list(case.evidence_by(side))
        else:
            n = block.repeat if isinstance(block.repeat, int) else counters.get((script.stage, block.repeat), 0)
            items = [None] * n
        for rnd, item in enumerate(items, start=1):
            fields = _SafeDict(round=rnd, charge=case.charge_label)
            if item is not None:
                fields.update(
                    evidence_id=item.evidence_id, evidence_title=item.title, evidence_content=item.content
                )
            for turn in block.turns:
                if turn.enabled_by and not config.flag(turn.enabled_by):
                    continue
                key = (turn.role, turn.kind)
                seen[key] = seen.get(key, 0) + 1
                out.append(
                    Directive(
                        role=turn.role,
                        kind=turn.kind,
                        hint=turn.hint.format_map(fields),
                        stage=script.stage,
                        label=f"{label_prefix}{turn.kind}#{seen[key]}",
                        subject=item.evidence_id if item is not None else None,
                        round=rnd,
                    )
                )
    return out


def _enter(state: TrialState, stage: Stage, plan: list[Directive]) -> None:
    if not plan:
        raise ProcedureError(f"{stage.value}: expanded script is empty")
    state.stage = stage
    state.plan = plan
    state.turn_cursor = 0
    state.transcript.segments.append(StageSegment(stage))


def start_trial(case: CaseMaterials, config: ProcedureConfig | None = None) -> TrialState:
    config = config or ProcedureConfig()
    violations = validate_case(case)
    if violations:
        raise InvalidCase(violations)
    state = TrialState(
        case=case,
        config=config,
        stage=Stage.TRIAL_PREPARATION,
        transcript=TrialTranscript(case.case_id),
        round_counters=_prime_counters(case, config),
        backtrack_budget=config.backtrack_budget,
    )
    script = config.script_set.stages[Stage.TRIAL_PREPARATION]
    _enter(state, Stage.TRIAL_PREPARATION, expand_script(script, case, config, state.round_counters))
    return state


def next_directive(state: TrialState) -> Directive | StageEnd | TrialEnd:
    if state.stage is Stage.CONCLUDED:
        raise ProcedureError("trial already concluded")
    if state.turn_cursor < len(state.plan):
        return state.plan[state.turn_cursor]
    if state.stage is Stage.FINAL_STATEMENT and state.judgment_given:
        return TrialEnd()
    return StageEnd(state.stage)


def apply_utterance(state: TrialState, role: Role, text: str) -> TrialState:
    pending = state.pending
    if pending is None:
        raise OutOfTurn(f"no pending turn in {state.stage.value}; {role.value} cannot speak")
    if Role(role) is not pending.role:
        raise OutOfTurn(f"pending turn is ({pending.role.value}, {pending.kind}); got {Role(role).value}")
    tr = state.transcript
    seq = tr.utterances[-1].seq + 1 if tr.utterances else 0
    tr.utterances.append(Utterance(seq, state.stage, pending.role, pending.kind, text))
    seg = tr.segments[-1]
    if seg.first_seq is None:
        seg.first_seq = seq
    seg.last_seq = seq
    if pending.kind == "judgment" and pending.role is Role.JUDGE:
        state.judgment_given = True
    state.turn_cursor += 1
    return state


def record_reflection(state: TrialState, role: Role) -> TrialState:
    role = Role(role)
    if role is Role.STENOGRAPHER:
        raise ProcedureError("the stenographer does not reflect")
    idx = state.segment_index
    if any(ev.segment == idx and ev.role is role for ev in state.transcript.reflection_events):
        raise ProcedureError(f"{role.value} already reflected on segment {idx}")
    state.transcript.reflection_events.append(ReflectionEvent(state.stage, role, idx))
    return state


def advance_stage(state: TrialState) -> TrialState:
    if state.stage is Stage.CONCLUDED:
        raise ProcedureError("trial already concluded")
    if state.turn_cursor < len(state.plan):
        p = state.pending
        raise StageNotFinished(
            f"{state.stage.value}: {len(state.plan) - state.turn_cursor} turns left, next ({p.role.value}, {p.kind})"
        )
    scripts = state.config.script_set
    if state.in_excursion:
        back = state.excursion_return
        state.excursion_return = None
        resume = expand_script(scripts.backtrack[back], state.case, state.config, state.round_counters, "resume:")
        plan = resume + state.saved_plan
        state.saved_plan = []
        _enter(state, back, plan)
    elif state.stage is Stage.FINAL_STATEMENT:
        state.stage = Stage.CONCLUDED
        state.plan = []
        state.turn_cursor = 0
    else:
        nxt = state.stage.successor
        _enter(state, nxt, expand_script(scripts.stages[nxt], state.case, state.config, state.round_counters))
    return state


def request_backtrack(state: TrialState, target: Stage) -> TrialState | Refusal:
    """Return from the debate to investigation or evidence for one abbreviated round."""
    target = Stage(target)
    if state.stage is not Stage.TRIAL_DEBATE or state.in_excursion or target not in BACKTRACK_TARGETS:
        raise IllegalBacktrack(f"{state.stage.value} -> {target.value} is not an allowed backtrack")
    if state.backtrack_budget <= 0:
        return Refusal("backtrack budget exhausted")
    scripts = state.config.script_set
    if target not in scripts.backtrack or Stage.TRIAL_DEBATE not in scripts.backtrack:
        return Refusal(f"no abbreviated script for {target.value}")
    state.backtrack_budget -= 1
    state.saved_plan = state.plan[state.turn_cursor:]
    state.excursion_return = Stage.TRIAL_DEBATE
    plan = expand_script(scripts.backtrack[target], state.case, state.config, state.round_counters, "backtrack:")
    _enter(state, target, plan)
    return state


# -- conformance ----------------------------------------------------------------------


@dataclass(frozen=True)
class ConformanceViolation:
    rule: str  # stage-order | role | debate-rounds | debate-framing | allocution | reflection | evidence
    detail: str
    seq: int | None = None

    def __str__(self) -> str:
        where = f" (seq {self.seq})" if self.seq is not None else ""
        return f"[{self.rule}] {self.detail}{where}"


def _segments(tr: TrialTranscript) -> list[tuple[int, StageSegment, list[Utterance]]]:
    out = []
    for i, seg in enumerate(tr.segments):
        if seg.first_seq is None:
            utts = []
        else:
            utts = [u for u in tr.utterances if seg.first_seq <= u.seq <= seg.last_seq]
        out.append((i, seg, utts))
    return out


def conformance_check(
    transcript: TrialTranscript,
    config: ProcedureConfig | None = None,
    case: CaseMaterials | None = None,
) -> list[ConformanceViolation]:
    """Check a finished transcript against the procedure; empty list means conformant."""
    config = config or ProcedureConfig()
    scripts = config.script_set
    out: list[ConformanceViolation] = []
    segs = _segments(transcript)
    tr = transcript

    # seq monotonic and stage labels consistent with segments
    for a, b in zip(tr.utterances, tr.utterances[1:]):
        if b.seq <= a.seq:
            out.append(ConformanceViolation("stage-order", "seq not strictly increasing", b.seq))
    for _, seg, utts in segs:
        for u in utts:
            if u.stage is not seg.stage:
                out.append(ConformanceViolation("stage-order", f"utterance labelled {u.stage.value} inside a {seg.stage.value} segment", u.seq))

    # (a) canonical order with bounded backtrack excursions
    stages = [seg.stage for _, seg, _ in segs]
    excursion_segments: set[int] = set()
    resume_segments: set[int] = set()
    excursions = 0
    if not stages or stages[0] is not Stage.TRIAL_PREPARATION:
        out.append(ConformanceViolation("stage-order", "trial does not open with TrialPreparation"))
    for i in range(1, len(stages)):
        prev, cur = stages[i - 1], stages[i]
        if (i - 1) in excursion_segments:
            if cur is not Stage.TRIAL_DEBATE:
                out.append(ConformanceViolation("stage-order", f"backtrack excursion to {prev.value} must return to TrialDebate, went to {cur.value}"))
            resume_segments.add(i)
        elif prev is Stage.TRIAL_DEBATE and cur in BACKTRACK_TARGETS:
            excursions += 1
            excursion_segments.add(i)
        elif prev is Stage.CONCLUDED or prev.successor is not cur:
            out.append(ConformanceViolation("stage-order", f"{prev.value} -> {cur.value} is not a canonical transition"))
    if excursions > config.backtrack_budget:
        out.append(ConformanceViolation("stage-order", f"{excursions} backtracks exceed budget {config.backtrack_budget}"))

    # (b) roles permitted by each stage's script
    for _, seg, utts in segs:
        allowed = scripts.allowed_roles(seg.stage)
        for u in utts:
            if u.role not in allowed:
                out.append(ConformanceViolation("role", f"{u.role.value} may not speak during {u.stage.value}", u.seq))

    # (c) debate rounds and judge framing
    debate = [(i, utts) for i, seg, utts in segs if seg.stage is Stage.TRIAL_DEBATE]
    if excursions == 0:
        for role in (Role.PROSECUTOR, Role.ATTORNEY):
            n = sum(1 for _, utts in debate for u in utts if u.role is role and u.directive_kind == "debate")
            if n != config.debate_rounds:
                out.append(ConformanceViolation("debate-rounds", f"{role.value} spoke in {n} debate rounds, expected {config.debate_rounds}"))
    for i, utts in debate:
        if i in resume_segments:
            continue
        if not utts or utts[0].role is not Role.JUDGE:
            out.append(ConformanceViolation("debate-framing", "debate does not open with a Judge framing turn", utts[0].seq if utts else None))
        else:
            first_round = next((u for u in utts if u.directive_kind == "debate"), None)
            if first_round is not None and first_round.seq < utts[0].seq:
                out.append(ConformanceViolation("debate-framing", "debate round precedes Judge framing", first_round.seq))

    # (d) allocution before judgment
    judgments = [u for u in tr.utterances if u.role is Role.JUDGE and u.directive_kind == "judgment"]
    allocs = [u for u in tr.utterances if u.role is Role.DEFENDANT and u.directive_kind == "allocution"]
    if not judgments:
        out.append(ConformanceViolation("allocution", "no judgment was issued"))
    elif not allocs or allocs[0].seq > judgments[0].seq:
        out.append(ConformanceViolation("allocution", "judgment issued without a prior defendant allocution", judgments[0].seq))

    # (e) one reflection per speaking agent per finished stage segment
    by_seg: dict[int, list[ReflectionEvent]] = {}
    for ev in tr.reflection_events:
        by_seg.setdefault(ev.segment, []).append(ev)
        if ev.role is Role.STENOGRAPHER:
            out.append(ConformanceViolation("reflection", f"stenographer reflection recorded on segment {ev.segment}"))
        if not 0 <= ev.segment < len(segs):
            out.append(ConformanceViolation("reflection", f"reflection refers to unknown segment {ev.segment}"))
        elif segs[ev.segment][1].stage is not ev.stage:
            out.append(ConformanceViolation("reflection", f"reflection stage {ev.stage.value} does not match segment {ev.segment}"))
    for i, seg, utts in segs:
        terminal = i == len(segs) - 1 and seg.stage is Stage.FINAL_STATEMENT
        if terminal:
            continue
        events = by_seg.get(i, [])
        counts: dict[Role, int] = {}
        for ev in events:
            counts[ev.role] = counts.get(ev.role, 0) + 1
        for role, n in counts.items():
            if n > 1:
                out.append(ConformanceViolation("reflection", f"{role.value} reflected {n} times on {seg.stage.value} (segment {i})"))
        for role in sorted({u.role for u in utts if u.role in AGENT_ROLES}, key=AGENT_ROLES.index):
            if counts.get(role, 0) == 0:
                out.append(ConformanceViolation("reflection", f"{role.value} did not reflect after {seg.stage.value} (segment {i})"))

    # evidence: one present turn per item, each answered by one opposing examination
    if case is not None:
        ev_utts = [u for i, seg, utts in segs if seg.stage is Stage.EVIDENCE_PRESENTATION and i not in excursion_segments for u in utts]
        for side, presenter, examiner in (
            (PartySide.PROSECUTION, Role.PROSECUTOR, Role.ATTORNEY),
            (PartySide.DEFENSE, Role.ATTORNEY, Role.PROSECUTOR),
        ):
            expected = len(case.evidence_by(side))
            idxs = [k for k, u in enumerate(ev_utts) if u.role is presenter and u.directive_kind == "present-evidence"]
            if len(idxs) != expected:
                out.append(ConformanceViolation("evidence", f"{presenter.value} presented {len(idxs)} items, case has {expected}"))
            for k in idxs:
                nxt = ev_utts[k + 1] if k + 1 < len(ev_utts) else None
                if nxt is None or nxt.role is not examiner or nxt.directive_kind != "examine-evidence":
                    out.append(ConformanceViolation("evidence", f"{presenter.value} evidence not examined by {examiner.value}", ev_utts[k].seq))
    return out
