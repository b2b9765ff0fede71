"""Core value types: cases, roles, stages, utterances, transcripts and judgments."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Union

from .errors import InvalidJudgment


class Role(str, Enum):
    JUDGE = "Judge"
    PROSECUTOR = "Prosecutor"
    ATTORNEY = "Attorney"
    DEFENDANT = "Defendant"
    STENOGRAPHER = "Stenographer"


AGENT_ROLES = (Role.JUDGE, Role.PROSECUTOR, Role.ATTORNEY, Role.DEFENDANT)


class Stage(str, Enum):
    TRIAL_PREPARATION = "TrialPreparation"
    TRIAL_INVESTIGATION = "TrialInvestigation"
    EVIDENCE_PRESENTATION = "EvidencePresentation"
    TRIAL_DEBATE = "TrialDebate"
    FINAL_STATEMENT = "FinalStatement"
    CONCLUDED = "Concluded"

    @property
    def successor(self) -> Stage:
        if self is Stage.CONCLUDED:
            raise ValueError("Concluded has no successor")
        order = list(Stage)
        return order[order.index(self) + 1]


ACTIVE_STAGES = tuple(s for s in Stage if s is not Stage.CONCLUDED)


class PartySide(str, Enum):
    PROSECUTION = "prosecution"
    DEFENSE = "defense"


@dataclass(frozen=True)
class EvidenceItem:
    evidence_id: str
    title: str
    content: str
    submitted_by: PartySide

    def __post_init__(self):
        object.__setattr__(self, "submitted_by", PartySide(self.submitted_by))


@dataclass(frozen=True)
class CaseMaterials:
    case_id: str
    charge_label: str
    defendant_info: str
    indictment: str
    evidence: tuple[EvidenceItem, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "evidence", tuple(self.evidence))

    def evidence_by(self, side: PartySide) -> list[EvidenceItem]:
        return [e for e in self.evidence if e.submitted_by is side]

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "charge_label": self.charge_label,
            "defendant_info": self.defendant_info,
            "indictment": self.indictment,
            "evidence": [
                {
                    "evidence_id": e.evidence_id,
                    "title": e.title,
                    "content": e.content,
                    "submitted_by": e.submitted_by.value,
                }
                for e in self.evidence
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> CaseMaterials:
        return cls(
            case_id=str(data.get("case_id", "")),
            charge_label=str(data.get("charge_label", "")),
            defendant_info=str(data.get("defendant_info", "")),
            indictment=str(data.get("indictment", "")),
            evidence=tuple(
                EvidenceItem(
                    evidence_id=str(e.get("evidence_id", "")),
                    title=str(e.get("title", "")),
                    content=str(e.get("content", "")),
                    submitted_by=e.get("submitted_by", ""),
                )
                for e in data.get("evidence", [])
            ),
        )


def load_case(path: str | Path) -> CaseMaterials:
    with open(path, encoding="utf-8") as f:
        return CaseMaterials.from_dict(json.load(f))


def dump_case(case: CaseMaterials, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(case.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}"


def validate_case(case: CaseMaterials) -> list[Violation]:
    """Return every broken CaseMaterials invariant; an empty list means valid."""
    out: list[Violation] = []
    if not case.case_id.strip():
        out.append(Violation("case_id", "must be non-empty"))
    if not case.indictment.strip():
        out.append(Violation("indictment", "must be non-empty"))
    seen: dict[str, int] = {}
    for i, item in enumerate(case.evidence):
        if item.evidence_id in seen:
            out.append(
                Violation(
                    "evidence",
                    f"duplicate evidence_id {item.evidence_id!r} at items "
                    f"{seen[item.evidence_id]} and {i}",
                )
            )
        else:
            seen[item.evidence_id] = i
        if not item.title.strip():
            out.append(Violation(f"evidence[{i}].title", "must be non-empty"))
    return out


# -- transcript -----------------------------------------------------------------


@dataclass(frozen=True)
class Utterance:
    seq: int
    stage: Stage
    role: Role
    directive_kind: str
    text: str

    def __post_init__(self):
        if self.stage is Stage.CONCLUDED:
            raise ValueError("utterances cannot belong to the Concluded stage")
        if self.seq < 0:
            raise ValueError("seq must be non-negative")


@dataclass(frozen=True)
class ReflectionEvent:
    stage: Stage
    role: Role
    segment: int


@dataclass
class StageSegment:
    """One contiguous run of utterances in a single stage."""

    stage: Stage
    first_seq: int | None = None
    last_seq: int | None = None


@dataclass
class TrialTranscript:
    case_id: str
    utterances: list[Utterance] = field(default_factory=list)
    segments: list[StageSegment] = field(default_factory=list)
    reflection_events: list[ReflectionEvent] = field(default_factory=list)

    @property
    def stage_boundaries(self) -> dict[Stage, tuple[int, int]]:
        """Stage -> (first_seq, last_seq), spanning every segment of that stage."""
        out: dict[Stage, tuple[int, int]] = {}
        for seg in self.segments:
            if seg.first_seq is None:
                continue
            lo, hi = out.get(seg.stage, (seg.first_seq, seg.last_seq))
            out[seg.stage] = (min(lo, seg.first_seq), max(hi, seg.last_seq))
        return out

    def stage_utterances(self, stage: Stage) -> list[Utterance]:
        return [u for u in self.utterances if u.stage is stage]

    def to_jsonl(self) -> str:
        """Serialize in chronological order: utterances interleaved with reflections."""
        lines = []
        refl_by_seg: dict[int, list[ReflectionEvent]] = {}
        for ev in self.reflection_events:
            refl_by_seg.setdefault(ev.segment, []).append(ev)
        for idx, seg in enumerate(self.segments):
            if seg.first_seq is not None:
                for u in (u for u in self.utterances if seg.first_seq <= u.seq <= seg.last_seq):
                    lines.append(
                        {
                            "type": "utterance",
                            "case_id": self.case_id,
                            "seq": u.seq,
                            "stage": u.stage.value,
                            "role": u.role.value,
                            "directive_kind": u.directive_kind,
                            "text": u.text,
                        }
                    )
            for ev in refl_by_seg.get(idx, []):
                lines.append(
                    {
                        "type": "reflection",
                        "case_id": self.case_id,
                        "segment": ev.segment,
                        "stage": ev.stage.value,
                        "role": ev.role.value,
                    }
                )
        return "".join(json.dumps(rec, ensure_ascii=False) + "\n" for rec in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> TrialTranscript:
        case_id = ""
        tr = cls(case_id="")
        for raw in text.splitlines():
            if not raw.strip():
                continue
            rec = json.loads(raw)
            case_id = rec.get("case_id", case_id)
            if rec["type"] == "utterance":
                u = Utterance(
                    seq=rec["seq"],
                    stage=Stage(rec["stage"]),
                    role=Role(rec["role"]),
                    directive_kind=rec["directive_kind"],
                    text=rec["text"],
                )
                if not tr.segments or tr.segments[-1].stage is not u.stage or _segment_closed(tr, len(tr.segments) - 1):
                    tr.segments.append(StageSegment(u.stage, u.seq, u.seq))
                else:
                    tr.segments[-1].last_seq = u.seq
                tr.utterances.append(u)
            elif rec["type"] == "reflection":
                tr.reflection_events.append(
                    ReflectionEvent(Stage(rec["stage"]), Role(rec["role"]), int(rec["segment"]))
                )
            else:
                raise ValueError(f"unknown record type {rec['type']!r}")
        tr.case_id = case_id
        return tr


def _segment_closed(tr: TrialTranscript, idx: int) -> bool:
    # a reflection recorded for a segment means the next utterance opens a new one
    return any(ev.segment == idx for ev in tr.reflection_events)


# -- judgments ------------------------------------------------------------------


@dataclass(frozen=True)
class Months:
    """Custodial term in months (fixed-term imprisonment or criminal detention)."""

    value: int
    detention: bool = field(default=False, compare=False)  # provenance: 拘役

    def __post_init__(self):
        if int(self.value) != self.value or self.value < 0:
            raise ValueError(f"months must be a non-negative integer, got {self.value!r}")
        object.__setattr__(self, "value", int(self.value))


@dataclass(frozen=True)
class LifeImprisonment:
    pass


@dataclass(frozen=True)
class DeathPenalty:
    pass


@dataclass(frozen=True)
class NoCustody:
    pass


ImprisonmentTerm = Union[Months, LifeImprisonment, DeathPenalty, NoCustody]


def term_months(term: ImprisonmentTerm) -> int | None:
    """Numeric months for the metric code; None for life and death sentences."""
    if isinstance(term, Months):
        return term.value
    if isinstance(term, NoCustody):
        return 0
    return None


def term_token(term: ImprisonmentTerm) -> int | str:
    if isinstance(term, Months):
        return term.value
    if isinstance(term, LifeImprisonment):
        return "无期徒刑"
    if isinstance(term, DeathPenalty):
        return "死刑"
    return "无"


def term_from_token(token) -> ImprisonmentTerm:
    if isinstance(token, bool):
        raise ValueError(f"bad imprisonment token {token!r}")
    if isinstance(token, int):
        return Months(token)
    tok = str(token).strip()
    if tok.isdigit():
        return Months(int(tok))
    if tok == "无期徒刑":
        return LifeImprisonment()
    if tok == "死刑":
        return DeathPenalty()
    if tok in ("无", "免予刑事处罚"):
        return NoCustody()
    raise ValueError(f"bad imprisonment token {token!r}")


ArticleRef = tuple[str, int]


@dataclass(frozen=True)
class Judgment:
    imprisonment: ImprisonmentTerm
    probation_applicable: bool = False
    probation_months: int | None = None
    fine_applicable: bool = False
    fine_amount: int | None = None
    reasoning: str = ""
    cited_articles: tuple[ArticleRef, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "cited_articles", tuple(tuple(a) for a in self.cited_articles))
        if self.probation_months is not None:
            if not self.probation_applicable:
                raise InvalidJudgment("probation_months given without probation_applicable")
            if self.probation_months <= 0:
                raise InvalidJudgment("probation_months must be positive")
        if self.fine_amount is not None:
            if not self.fine_applicable:
                raise InvalidJudgment("fine_amount given without fine_applicable")
            if self.fine_amount < 0:
                raise InvalidJudgment("fine_amount must be non-negative")

    def to_record(self, case_id: str) -> dict:
        """Prediction-file record: integer tokens, ``无`` for not applicable, ``是`` for applicable without a number."""
        if self.probation_months is not None:
            probation: int | str = self.probation_months
        else:
            probation = "是" if self.probation_applicable else "无"
        if self.fine_amount is not None:
            fine: int | str = self.fine_amount
        else:
            fine = "是" if self.fine_applicable else "无"
        return {
            "case_id": case_id,
            "imprisonment": term_token(self.imprisonment),
            "probation": probation,
            "fine": fine,
        }

    @classmethod
    def from_record(cls, rec: dict) -> Judgment:
        prob = rec.get("probation", "无")
        fine = rec.get("fine", "无")
        return cls(
            imprisonment=term_from_token(rec["imprisonment"]),
            probation_applicable=_flag(prob),
            probation_months=_amount(prob),
            fine_applicable=_flag(fine),
            fine_amount=_amount(fine),
        )


def _flag(token) -> bool:
    if token is None or token is False:
        return False
    if token is True or isinstance(token, int):
        return True
    return str(token).strip() not in ("", "无", "否")


def _amount(token) -> int | None:
    if isinstance(token, bool) or token is None:
        return None
    if isinstance(token, int):
        return token
    tok = str(token).strip()
    return int(tok) if tok.isdigit() else None


@dataclass(frozen=True)
class StatutoryRange:
    lower: int
    upper: int

    def __post_init__(self):
        if not 0 <= self.lower <= self.upper:
            raise ValueError(f"need 0 <= lower <= upper, got [{self.lower}, {self.upper}]")

    def __contains__(self, months) -> bool:
        return self.lower <= months <= self.upper


def iter_cases(paths: Iterable[str | Path]) -> list[CaseMaterials]:
    return [load_case(p) for p in paths]
