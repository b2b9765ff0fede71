"""Blinded pairwise process evaluation: pairing, unblinding, majority votes and agreement."""

from __future__ import annotations

import csv
import itertools
import json
import random
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DegenerateMarginals, LengthMismatch, MissingAnnotation

ASPECT_STAGES = ("TrialInvestigation", "EvidencePresentation", "TrialDebate", "Overall")
ASPECT_ROLES = ("Judge", "Prosecutor", "Attorney")
_STAGE_HEADINGS = {
    "TrialInvestigation": "Trial Investigation",
    "EvidencePresentation": "Evidence Presentation",
    "TrialDebate": "Trial Debate",
    "Overall": "Overall Performance",
}


class Preference(str, Enum):
    FIRST = "First"
    SECOND = "Second"
    DRAW = "Draw"


class Outcome(str, Enum):
    SIM = "Sim"
    HUMAN = "Human"
    DRAW = "Draw"


@dataclass(frozen=True)
class Aspect:
    aspect_id: str
    stage: str
    role: str
    name: str


def load_catalog(path: str | Path | None = None) -> list[Aspect]:
    if path is None:
        text = (resources.files("mocktrial") / "data" / "aspects.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    catalog = [Aspect(**item) for item in json.loads(text)]
    if len(catalog) != 30:
        raise ValueError(f"aspect catalog must have 30 entries, has {len(catalog)}")
    if len({a.aspect_id for a in catalog}) != 30:
        raise ValueError("aspect ids must be unique")
    groups = Counter((a.stage, a.role) for a in catalog)
    for stage in ASPECT_STAGES[:3]:
        for role in ASPECT_ROLES:
            if groups[(stage, role)] != 3:
                raise ValueError(f"aspect group {stage}/{role} must have 3 entries")
    if sum(n for (stage, _), n in groups.items() if stage == "Overall") != 3:
        raise ValueError("catalog must have 3 Overall entries")
    return catalog


# -- pairing and blinding ------------------------------------------------------------


@dataclass(frozen=True)
class EvaluationPair:
    pair_id: str
    record_first: str
    record_second: str


def make_pairs(
    sim: Sequence[str], human: Sequence[str], seed: int
) -> tuple[list[EvaluationPair], dict[str, Preference]]:
    """Shuffle each (sim, human) pair into positions; the key says where the simulation sits."""
    if len(sim) != len(human):
        raise LengthMismatch(f"{len(sim)} simulated vs {len(human)} human records")
    rng = random.Random(seed)
    pairs, keys = [], {}
    width = max(3, len(str(len(sim))))
    for i, (s, h) in enumerate(zip(sim, human), start=1):
        pid = f"P{i:0{width}d}"
        if rng.random() < 0.5:
            pairs.append(EvaluationPair(pid, s, h))
            keys[pid] = Preference.FIRST
        else:
            pairs.append(EvaluationPair(pid, h, s))
            keys[pid] = Preference.SECOND
    return pairs, keys


KEY_HEADER = "# SEALED BLINDING KEY: do not show this file to annotators.\n# pair_id,sim_position\n"


def write_pairs(pairs: Iterable[EvaluationPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["pair_id", "record_first", "record_second"])
        for p in pairs:
            w.writerow([p.pair_id, p.record_first, p.record_second])


def write_blinding_keys(keys: Mapping[str, Preference], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(KEY_HEADER)
        w = csv.writer(f)
        for pid in sorted(keys):
            w.writerow([pid, Preference(keys[pid]).value])


def read_blinding_keys(path: str | Path) -> dict[str, Preference]:
    keys: dict[str, Preference] = {}
    with open(path, encoding="utf-8", newline="") as f:
        rows = csv.reader(line for line in f if line.strip() and not line.startswith("#"))
        for row in rows:
            pid, pos = row[0].strip(), row[1].strip()
            if pid in keys:
                raise ValueError(f"{path}: duplicate key for {pid}")
            pos = Preference(pos)
            if pos is Preference.DRAW:
                raise ValueError(f"{path}: sim position for {pid} must be First or Second")
            keys[pid] = pos
    return keys


# -- annotations ---------------------------------------------------------------------


@dataclass(frozen=True)
class AnnotationRecord:
    pair_id: str
    aspect_id: str
    annotator_id: str
    preference: Preference

    def __post_init__(self):
        object.__setattr__(self, "preference", Preference(self.preference))


def read_annotations(path: str | Path) -> list[AnnotationRecord]:
    out: list[AnnotationRecord] = []
    seen: set[tuple[str, str, str]] = set()
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(line for line in f if not line.startswith("#"))
        need = {"pair_id", "aspect_id", "annotator_id", "preference"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain {sorted(need)}")
        for row_no, row in enumerate(reader, start=2):
            try:
                rec = AnnotationRecord(
                    row["pair_id"].strip(), row["aspect_id"].strip(), row["annotator_id"].strip(), row["preference"].strip()
                )
            except ValueError:
                raise ValueError(f"{path}:{row_no}: preference must be First, Second or Draw") from None
            key = (rec.pair_id, rec.aspect_id, rec.annotator_id)
            if key in seen:
                raise ValueError(f"{path}:{row_no}: duplicate annotation {key}")
            seen.add(key)
            out.append(rec)
    return out


def unblind(pref: Preference, sim_position: Preference) -> Outcome:
    if pref is Preference.DRAW:
        return Outcome.DRAW
    return Outcome.SIM if pref is sim_position else Outcome.HUMAN


def majority(votes: Iterable[Outcome]) -> Outcome:
    """Drop draws; the side with strictly more remaining votes wins, otherwise a draw."""
    c = Counter(Outcome(v) for v in votes)
    if c[Outcome.SIM] > c[Outcome.HUMAN]:
        return Outcome.SIM
    if c[Outcome.HUMAN] > c[Outcome.SIM]:
        return Outcome.HUMAN
    return Outcome.DRAW


@dataclass(frozen=True)
class AspectFractions:
    sim: Fraction
    draw: Fraction
    human: Fraction
    n_pairs: int


@dataclass(frozen=True)
class AggregateResult:
    aspects: dict[str, AspectFractions]
    outcomes: dict[tuple[str, str], Outcome]


def aggregate(
    annotations: Iterable[AnnotationRecord],
    keys: Mapping[str, Preference],
    catalog: Sequence[Aspect] | None = None,
) -> AggregateResult:
    """Per-aspect fractions of pairs won by the simulation, drawn, or won by the human record.

    Every (pair, aspect) must carry a vote from every annotator seen in the
    file; pairs are those in ``keys``, aspects those in ``catalog`` (default:
    the aspects present in the annotations).
    """
    annotations = list(annotations)
    votes: dict[tuple[str, str], dict[str, Preference]] = {}
    for a in annotations:
        if a.pair_id not in keys:
            raise MissingAnnotation(f"no blinding key for pair {a.pair_id}")
        votes.setdefault((a.pair_id, a.aspect_id), {})[a.annotator_id] = a.preference
    annotators = sorted({a.annotator_id for a in annotations})
    aspect_ids = [a.aspect_id for a in catalog] if catalog is not None else sorted({a.aspect_id for a in annotations})
    if not annotators or not keys:
        raise MissingAnnotation("no annotations to aggregate")
    outcomes: dict[tuple[str, str], Outcome] = {}
    for pid in sorted(keys):
        for aid in aspect_ids:
            got = votes.get((pid, aid), {})
            gaps = [x for x in annotators if x not in got]
            if gaps:
                raise MissingAnnotation(f"pair {pid}, aspect {aid}: no vote from {', '.join(gaps)}")
            outcomes[(pid, aid)] = majority(unblind(got[x], keys[pid]) for x in annotators)
    n = len(keys)
    result = {}
    for aid in aspect_ids:
        c = Counter(outcomes[(pid, aid)] for pid in keys)
        result[aid] = AspectFractions(
            Fraction(c[Outcome.SIM], n), Fraction(c[Outcome.DRAW], n), Fraction(c[Outcome.HUMAN], n), n
        )
    return AggregateResult(result, outcomes)


# -- agreement -------------------------------------------------------------------------

LABELS = tuple(p.value for p in Preference)


def cohen_kappa(a: Sequence[str], b: Sequence[str], labels: Sequence[str] = LABELS) -> float:
    if len(a) != len(b):
        raise LengthMismatch(f"label vectors differ in length: {len(a)} vs {len(b)}")
    if not a:
        raise LengthMismatch("label vectors are empty")
    a = [str(getattr(x, "value", x)) for x in a]
    b = [str(getattr(x, "value", x)) for x in b]
    n = len(a)
    po = Fraction(sum(1 for x, y in zip(a, b) if x == y), n)
    ca, cb = Counter(a), Counter(b)
    pe = sum(Fraction(ca[k] * cb[k], n * n) for k in set(labels) | set(ca) | set(cb))
    if pe == 1:
        raise DegenerateMarginals("chance agreement is 1; kappa is undefined")
    return float((po - pe) / (1 - pe))


def average_kappa(by_annotator: Mapping[str, Sequence[str]], labels: Sequence[str] = LABELS) -> float:
    """Mean Cohen's kappa over all annotator pairs."""
    ids = sorted(by_annotator)
    if len(ids) < 2:
        raise LengthMismatch("need at least two annotators")
    values = [cohen_kappa(by_annotator[x], by_annotator[y], labels) for x, y in itertools.combinations(ids, 2)]
    return sum(values) / len(values)


def fleiss_kappa(by_annotator: Mapping[str, Sequence[str]], labels: Sequence[str] = LABELS) -> float:
    ids = sorted(by_annotator)
    if len(ids) < 2:
        raise LengthMismatch("need at least two annotators")
    n_items = len(by_annotator[ids[0]])
    if any(len(by_annotator[x]) != n_items for x in ids) or n_items == 0:
        raise LengthMismatch("all annotators must label the same non-empty item list")
    m = len(ids)
    cats = sorted(set(labels) | {str(getattr(v, "value", v)) for x in ids for v in by_annotator[x]})
    p_bar = Fraction(0)
    totals = Counter()
    for i in range(n_items):
        c = Counter(str(getattr(by_annotator[x][i], "value", by_annotator[x][i])) for x in ids)
        totals.update(c)
        p_bar += Fraction(sum(v * (v - 1) for v in c.values()), m * (m - 1))
    p_bar /= n_items
    pe = sum(Fraction(totals[k], n_items * m) ** 2 for k in cats)
    if pe == 1:
        raise DegenerateMarginals("chance agreement is 1; kappa is undefined")
    return float((p_bar - pe) / (1 - pe))


def label_vectors(
    annotations: Iterable[AnnotationRecord],
    keys: Mapping[str, Preference] | None = None,
) -> dict[str, list[str]]:
    """Per-annotator labels over the shared (pair, aspect) items, in sorted item order.

    With ``keys`` the labels are unblinded to Sim/Human/Draw first.
    """
    table: dict[str, dict[tuple[str, str], str]] = {}
    for a in annotations:
        label = unblind(a.preference, keys[a.pair_id]).value if keys is not None else a.preference.value
        table.setdefault(a.annotator_id, {})[(a.pair_id, a.aspect_id)] = label
    items = sorted(set.intersection(*(set(v) for v in table.values()))) if table else []
    return {x: [table[x][it] for it in items] for x in sorted(table)}


# -- report ------------------------------------------------------------------------------


def report(result: AggregateResult, catalog: Sequence[Aspect] | None = None) -> str:
    """Table with a heading per stage/role group and one row per aspect."""
    catalog = list(catalog) if catalog is not None else load_catalog()
    name_w = max(len(a.name) for a in catalog) + 2
    lines = [f"{'Aspect':<{name_w}}{'Sim.':>6}{'Draw':>6}{'Hum.':>6}"]
    group = None
    for a in catalog:
        if a.aspect_id not in result.aspects:
            continue
        heading = _STAGE_HEADINGS[a.stage] if a.stage == "Overall" else f"{_STAGE_HEADINGS[a.stage]}-{a.role}"
        if heading != group:
            lines.append(f"[{heading}]")
            group = heading
        f = result.aspects[a.aspect_id]
        lines.append(f"{a.name:<{name_w}}{float(f.sim):>6.2f}{float(f.draw):>6.2f}{float(f.human):>6.2f}")
    return "\n".join(lines) + "\n"


def report_dict(result: AggregateResult, catalog: Sequence[Aspect] | None = None, kappa: float | None = None) -> dict:
    catalog = list(catalog) if catalog is not None else load_catalog()
    rows = []
    for a in catalog:
        if a.aspect_id not in result.aspects:
            continue
        f = result.aspects[a.aspect_id]
        rows.append(
            {
                "aspect_id": a.aspect_id,
                "stage": a.stage,
                "role": a.role,
                "name": a.name,
                "sim": round(float(f.sim), 6),
                "draw": round(float(f.draw), 6),
                "human": round(float(f.human), 6),
                "n_pairs": f.n_pairs,
            }
        )
    out: dict = {"aspects": rows}
    if kappa is not None:
        out["average_kappa"] = round(kappa, 6)
    return out
