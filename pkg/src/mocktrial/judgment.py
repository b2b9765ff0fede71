"""Judgment extraction and the sentencing metrics (hit rate, relative error, accuracy, significance)."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .domain import (
    DeathPenalty,
    Judgment,
    LifeImprisonment,
    Months,
    NoCustody,
    StatutoryRange,
    term_from_token,
    term_months,
    term_token,
)
from .errors import (
    AlignmentError,
    AllExcluded,
    EmptyInput,
    ExtractionFailure,
    LengthMismatch,
    UnparseableAmount,
    VerdictParseFailure,
)
from .parsing import NUM, find_duration, normalize, parse_amount, parse_article_refs, parse_period_months

log = logging.getLogger(__name__)

# -- verdict block ----------------------------------------------------------------------

VERDICT_OPEN = "===VERDICT==="
VERDICT_CLOSE = "===END==="
_BLOCK = re.compile(r"===VERDICT===[ \t]*\r?\n(.*?)\r?\n?[ \t]*===END===", re.S)
_NONE = ("无", "否", "", "none", "None")


def format_verdict_block(j: Judgment) -> str:
    prob = str(j.probation_months) if j.probation_months is not None else ("是" if j.probation_applicable else "无")
    fine = str(j.fine_amount) if j.fine_amount is not None else ("是" if j.fine_applicable else "无")
    arts = ", ".join(f"{law}:{num}" for law, num in j.cited_articles) or "无"
    return "\n".join(
        [
            VERDICT_OPEN,
            f"IMPRISONMENT: {term_token(j.imprisonment)}",
            f"PROBATION: {prob}",
            f"FINE: {fine}",
            f"ARTICLES: {arts}",
            VERDICT_CLOSE,
        ]
    )


def _flag_and_number(value: str, what: str) -> tuple[bool, int | None, bool]:
    """(applicable, number, contradictory) from a PROBATION/FINE value.

    Accepts ``无``, a number, ``是``, and flag-plus-number forms such as
    ``是 12`` or ``否 12``; the last is contradictory.
    """
    v = value.strip()
    if v in _NONE:
        return False, None, False
    m = re.fullmatch(r"(是|否|有|无)?[\s,，:：]*([0-9]+)?", v)
    if not m or (m.group(1) is None and m.group(2) is None):
        raise VerdictParseFailure(f"bad {what} value {value!r}")
    flag, num = m.group(1), m.group(2)
    number = int(num) if num is not None else None
    if flag in ("否", "无"):
        return number is not None, number, number is not None
    return True, number, False


def parse_verdict_block(text: str) -> Judgment:
    matches = list(_BLOCK.finditer(text))
    if not matches:
        raise VerdictParseFailure("no ===VERDICT=== ... ===END=== block", raw=text)
    m = matches[-1]
    fields: dict[str, str] = {}
    for line in m.group(1).splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            key, sep, value = line.partition("：")
        if not sep:
            raise VerdictParseFailure(f"unparseable verdict line {line!r}", raw=text)
        fields[key.strip().upper()] = value.strip()
    if "IMPRISONMENT" not in fields:
        raise VerdictParseFailure("verdict block lacks an IMPRISONMENT line", raw=text)
    try:
        term = term_from_token(fields["IMPRISONMENT"])
    except ValueError:
        from .parsing import parse_duration

        try:
            term = parse_duration(fields["IMPRISONMENT"])
        except ValueError:
            raise VerdictParseFailure(f"bad IMPRISONMENT value {fields['IMPRISONMENT']!r}", raw=text) from None
    try:
        p_flag, p_months, p_bad = _flag_and_number(fields.get("PROBATION", "无"), "PROBATION")
        f_flag, f_amount, f_bad = _flag_and_number(fields.get("FINE", "无"), "FINE")
    except VerdictParseFailure as exc:
        exc.raw = text
        raise
    if p_bad:
        log.warning("verdict states probation months without the probation flag; treating probation as applicable")
    if f_bad:
        log.warning("verdict states a fine amount without the fine flag; treating the fine as applicable")
    if p_months == 0:
        p_months = None
    articles = []
    arts = fields.get("ARTICLES", "")
    if arts.strip() not in _NONE:
        for part in re.split(r"[,，、;；]", arts):
            part = part.strip()
            if not part:
                continue
            law, sep, num = part.rpartition(":")
            if not sep:
                law, sep, num = part.rpartition("：")
            if sep and num.strip().isdigit():
                articles.append((law.strip().strip("《》"), int(num)))
            else:
                articles.extend(parse_article_refs(part))
    return Judgment(
        imprisonment=term,
        probation_applicable=p_flag,
        probation_months=p_months,
        fine_applicable=f_flag,
        fine_amount=f_amount,
        reasoning=text[: m.start()].strip(),
        cited_articles=tuple(articles),
    )


# -- free-text extraction ------------------------------------------------------------------

_NEGATION = re.compile(r"(?:不|不予|不宜|不得|无需|不应)(?:适用|宣告|判处|并处)?$")
_PROBATION = re.compile(r"缓刑")
_FINE = re.compile(rf"罚金(?:人民币)?((?:{NUM})(?:[万萬])?元)?")


def _negated(text: str, start: int) -> bool:
    return bool(_NEGATION.search(text[max(0, start - 4) : start]))


def extract_judgment(document: str) -> Judgment:
    """Pull imprisonment, probation and fine out of a judgment document.

    The verdict block is tried first. Otherwise the sentencing clause
    (after 判决如下 when present, and after 决定执行 for combined sentences) is
    scanned for the custodial phrase, 缓刑 and 罚金; a missing probation or fine
    phrase means not applicable. For combined sentences the executed part wins.
    """
    if VERDICT_OPEN in document:
        try:
            return parse_verdict_block(document)
        except VerdictParseFailure as exc:
            log.warning("verdict block unusable (%s); falling back to text extraction", exc)
    t = normalize(document)
    anchor = t.rfind("判决如下")
    clause = t[anchor:] if anchor >= 0 else t
    combined = clause.rfind("决定执行")
    term_text = clause[combined:] if combined >= 0 else clause
    found = find_duration(term_text)
    if found is None:
        raise ExtractionFailure("no sentencing phrase found")
    term = found[0]

    # a combined sentence states the executed probation and fine after 决定执行
    scope = term_text if "缓刑" in term_text else clause
    probation_applicable = False
    probation_months = None
    for m in _PROBATION.finditer(scope):
        if _negated(scope, m.start()):
            continue
        probation_applicable = True
        months = parse_period_months(scope[m.end():])
        if months:
            probation_months = months
            break

    fine_applicable = False
    fine_amount = None
    scope = term_text if "罚金" in term_text else clause
    for m in _FINE.finditer(scope):
        if _negated(scope, m.start()):
            continue
        fine_applicable = True
        if m.group(1):
            try:
                fine_amount = parse_amount(m.group(1))
            except UnparseableAmount:
                fine_amount = None
            break
    return Judgment(
        imprisonment=term,
        probation_applicable=probation_applicable,
        probation_months=probation_months,
        fine_applicable=fine_applicable,
        fine_amount=fine_amount,
        reasoning=document[: document.find("判决如下")] if "判决如下" in document else "",
        cited_articles=tuple(parse_article_refs(document)),
    )


# -- metrics -------------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalCase:
    case_id: str
    predicted: Judgment
    truth: Judgment
    truth_range: StatutoryRange | None = None

    def __post_init__(self):
        if isinstance(self.truth.imprisonment, Months) and self.truth.imprisonment.value > 0 and self.truth_range is None:
            raise ValueError(f"{self.case_id}: numeric truth imprisonment needs a statutory range")


def is_hit(case: EvalCase) -> bool:
    """Indicator for the sentencing-interval hit.

    Numeric prediction (NoCustody counts as 0 months) against a numeric truth
    with a range: inside [lower, upper]. Life or death on both sides: a hit
    when the variants agree. Anything else is a miss.
    """
    p, t = case.predicted.imprisonment, case.truth.imprisonment
    if isinstance(t, (LifeImprisonment, DeathPenalty)) or isinstance(p, (LifeImprisonment, DeathPenalty)):
        return type(p) is type(t)
    if case.truth_range is None:
        return False
    return term_months(p) in case.truth_range


def hit_rate(cases: Sequence[EvalCase]) -> float:
    if not cases:
        raise EmptyInput("hit_rate needs at least one case")
    return sum(1 for c in cases if is_hit(c)) / len(cases)


@dataclass(frozen=True)
class RelativeError:
    mean: float
    std: float
    n_included: int
    n_excluded: int
    per_case: tuple[float | None, ...] = field(default=(), repr=False)


def relative_error(values: Iterable[tuple[float | None, float | None]]) -> RelativeError:
    """Mean and population std of |P - T| / T, skipping T == 0 and non-numeric P or T."""
    per_case: list[float | None] = []
    for p, t in values:
        if p is None or t is None or t == 0:
            per_case.append(None)
        else:
            per_case.append(abs(p - t) / t)
    kept = np.array([r for r in per_case if r is not None], dtype=np.float64)
    if kept.size == 0:
        raise AllExcluded(f"all {len(per_case)} cases excluded from relative error")
    return RelativeError(
        mean=float(kept.mean()),
        std=float(kept.std()),
        n_included=int(kept.size),
        n_excluded=len(per_case) - int(kept.size),
        per_case=tuple(per_case),
    )


def binary_accuracy(flags: Iterable[tuple[bool, bool]]) -> float:
    flags = list(flags)
    if not flags:
        raise EmptyInput("binary_accuracy needs at least one pair")
    return sum(1 for p, t in flags if bool(p) == bool(t)) / len(flags)


def imprisonment_pairs(cases: Sequence[EvalCase]) -> list[tuple[int | None, int | None]]:
    return [(term_months(c.predicted.imprisonment), term_months(c.truth.imprisonment)) for c in cases]


def probation_pairs(cases: Sequence[EvalCase]) -> list[tuple[int | None, int | None]]:
    """Only cases where both sides give a positive probation length take part."""
    out = []
    for c in cases:
        p, t = c.predicted.probation_months, c.truth.probation_months
        out.append((p, t) if p and t else (None, None))
    return out


def fine_pairs(cases: Sequence[EvalCase]) -> list[tuple[int | None, int | None]]:
    """Cases with a positive true fine; a prediction without a fine counts as 0 yuan."""
    out = []
    for c in cases:
        t = c.truth.fine_amount
        if not t:
            out.append((None, None))
            continue
        if not c.predicted.fine_applicable:
            p = 0
        else:
            p = c.predicted.fine_amount  # None (amount unknown) is excluded
        out.append((p, t))
    return out


ASPECTS = ("imprisonment", "probation", "fine")
_PAIRS = {"imprisonment": imprisonment_pairs, "probation": probation_pairs, "fine": fine_pairs}


@dataclass(frozen=True)
class SignificanceResult:
    aspect: str
    p_value: float
    n_pairs: int
    method: str

    @property
    def stars(self) -> str:
        return "**" if self.p_value < 0.01 else "*" if self.p_value < 0.05 else ""


def significance(
    errors_a: Sequence[float],
    errors_b: Sequence[float],
    *,
    aspect: str = "",
    n_resamples: int = 10_000,
    seed: int = 0,
) -> SignificanceResult:
    """Two-sided paired sign-flip permutation test on the mean difference.

    With 2**n <= n_resamples every sign pattern is enumerated and the p-value
    is exact; otherwise ``n_resamples`` seeded random patterns are drawn and
    p = (hits + 1) / (n_resamples + 1).
    """
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"paired vectors differ in shape: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n < 2:
        raise LengthMismatch(f"need at least 2 pairs, got {n}")
    d = a - b
    observed = abs(float(d.sum()))
    # summation order differs between the kernel paths; compare with a small slack
    threshold = observed - 1e-9 * max(1.0, float(np.abs(d).sum()))
    if 2**n <= n_resamples:
        codes = np.arange(2**n, dtype=np.int64)[:, None] >> np.arange(n, dtype=np.int64)[None, :]
        signs = (1 - 2 * (codes & 1)).astype(np.int8)
        hits = kernels.count_extreme(d, signs, threshold)
        p = hits / 2**n
        method = "paired-permutation-exact"
    else:
        rng = np.random.default_rng(seed)
        hits = 0
        chunk = max(1, min(n_resamples, 2_000_000 // max(n, 1)))
        done = 0
        while done < n_resamples:
            m = min(chunk, n_resamples - done)
            signs = (1 - 2 * rng.integers(0, 2, size=(m, n), dtype=np.int8)).astype(np.int8)
            hits += kernels.count_extreme(d, signs, threshold)
            done += m
        p = (hits + 1) / (n_resamples + 1)
        method = f"paired-permutation-mc{n_resamples}"
    return SignificanceResult(aspect, min(1.0, float(p)), n, method)


@dataclass(frozen=True)
class AspectMetrics:
    relative_error_mean: float | None
    relative_error_std: float | None
    categorical: float
    n_included: int
    n_excluded: int


@dataclass(frozen=True)
class MetricsReport:
    n_cases: int
    imprisonment: AspectMetrics
    probation: AspectMetrics
    fine: AspectMetrics
    significance: dict[str, SignificanceResult | None] | None = None

    def aspect(self, name: str) -> AspectMetrics:
        return getattr(self, name)


def _aspect(pairs, categorical: float) -> AspectMetrics:
    try:
        re_ = relative_error(pairs)
        return AspectMetrics(re_.mean, re_.std, categorical, re_.n_included, re_.n_excluded)
    except AllExcluded:
        return AspectMetrics(None, None, categorical, 0, len(pairs))


def evaluate(cases: Sequence[EvalCase]) -> MetricsReport:
    if not cases:
        raise EmptyInput("evaluate needs at least one case")
    return MetricsReport(
        n_cases=len(cases),
        imprisonment=_aspect(imprisonment_pairs(cases), hit_rate(cases)),
        probation=_aspect(
            probation_pairs(cases),
            binary_accuracy((c.predicted.probation_applicable, c.truth.probation_applicable) for c in cases),
        ),
        fine=_aspect(
            fine_pairs(cases),
            binary_accuracy((c.predicted.fine_applicable, c.truth.fine_applicable) for c in cases),
        ),
    )


def compare_systems(
    system: Sequence[EvalCase],
    baseline: Sequence[EvalCase],
    *,
    n_resamples: int = 10_000,
    seed: int = 0,
) -> dict[str, SignificanceResult | None]:
    """Per-aspect permutation test on per-case relative errors, over cases both systems score."""
    if [c.case_id for c in system] != [c.case_id for c in baseline]:
        raise LengthMismatch("systems must cover the same cases in the same order")
    out: dict[str, SignificanceResult | None] = {}
    for aspect in ASPECTS:
        ea = _per_case(_PAIRS[aspect](system))
        eb = _per_case(_PAIRS[aspect](baseline))
        keep = [i for i, (x, y) in enumerate(zip(ea, eb)) if x is not None and y is not None]
        if len(keep) < 2:
            out[aspect] = None
            continue
        out[aspect] = significance(
            [ea[i] for i in keep], [eb[i] for i in keep], aspect=aspect, n_resamples=n_resamples, seed=seed
        )
    return out


def _per_case(pairs) -> list[float | None]:
    return [None if p is None or t is None or t == 0 else abs(p - t) / t for p, t in pairs]


# -- files and report ------------------------------------------------------------------------


def load_prediction_file(path: str | Path) -> dict[str, Judgment]:
    out: dict[str, Judgment] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            cid = str(rec["case_id"])
            if cid in out:
                raise ValueError(f"{path}:{line_no}: duplicate case_id {cid!r}")
            out[cid] = Judgment.from_record(rec)
    return out


def load_truth_file(path: str | Path) -> dict[str, tuple[Judgment, StatutoryRange | None]]:
    out: dict[str, tuple[Judgment, StatutoryRange | None]] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            cid = str(rec["case_id"])
            if cid in out:
                raise ValueError(f"{path}:{line_no}: duplicate case_id {cid!r}")
            rng = rec.get("range")
            out[cid] = (Judgment.from_record(rec), StatutoryRange(*rng) if rng else None)
    return out


def load_run_predictions(run_dir: str | Path) -> dict[str, Judgment]:
    out = {}
    for p in sorted(Path(run_dir, "judgments").glob("*.json")):
        rec = json.loads(p.read_text(encoding="utf-8"))
        out[str(rec["case_id"])] = Judgment.from_record(rec)
    return out


def align(predictions: dict[str, Judgment], truths: dict[str, tuple[Judgment, StatutoryRange | None]]) -> list[EvalCase]:
    missing_pred = set(truths) - set(predictions)
    missing_truth = set(predictions) - set(truths)
    if missing_pred or missing_truth:
        raise AlignmentError(missing_pred, missing_truth)
    return [EvalCase(cid, predictions[cid], truths[cid][0], truths[cid][1]) for cid in sorted(truths)]


def _r(x: float | None) -> float | None:
    return None if x is None else round(x, 6)


def report_to_dict(report: MetricsReport) -> dict:
    out: dict = {"n_cases": report.n_cases}
    for name, cat in (("imprisonment", "hit_rate"), ("probation", "accuracy"), ("fine", "accuracy")):
        a = report.aspect(name)
        out[name] = {
            "relative_error_mean": _r(a.relative_error_mean),
            "relative_error_std": _r(a.relative_error_std),
            cat: _r(a.categorical),
            "n_included": a.n_included,
            "n_excluded": a.n_excluded,
        }
    if report.significance is not None:
        out["significance"] = {
            k: None if v is None else {"p_value": _r(v.p_value), "n_pairs": v.n_pairs, "method": v.method, "stars": v.stars}
            for k, v in report.significance.items()
        }
    return out


def report_json(report: MetricsReport) -> str:
    return json.dumps(report_to_dict(report), ensure_ascii=False, indent=2) + "\n"


def format_table(report: MetricsReport, name: str = "system") -> str:
    def err(a: AspectMetrics, aspect: str) -> str:
        if a.relative_error_mean is None:
            return "n/a"
        s = f"{a.relative_error_mean:.3f}±{a.relative_error_std:.3f}"
        sig = (report.significance or {}).get(aspect)
        return s + (sig.stars if sig else "")

    head1 = f"{'':<14}{'Imprisonment':<28}{'Probation':<28}{'Fine':<28}"
    head2 = f"{'Method':<14}" + f"{'RelErr':<16}{'HitRate':<12}" + f"{'RelErr':<16}{'Accuracy':<12}" * 2
    row = f"{name:<14}"
    for aspect in ASPECTS:
        a = report.aspect(aspect)
        row += f"{err(a, aspect):<16}{a.categorical:<12.3f}"
    foot = "  ".join(
        f"{aspect}: n_included={report.aspect(aspect).n_included} n_excluded={report.aspect(aspect).n_excluded}"
        for aspect in ASPECTS
    )
    lines = [head1.rstrip(), head2.rstrip(), row.rstrip(), foot]
    if report.significance:
        lines.append(
            "  ".join(
                f"{k}: p={v.p_value:.4f}{v.stars} (n={v.n_pairs})" if v else f"{k}: p=n/a"
                for k, v in report.significance.items()
            )
        )
    return "\n".join(lines) + "\n"
