"""Parsers for Chinese sentencing phrases: numerals, durations, amounts, article citations."""

from __future__ import annotations

import re
import unicodedata

from .domain import DeathPenalty, ImprisonmentTerm, LifeImprisonment, Months, NoCustody
from .errors import UnparseableAmount, UnparseableDuration

_DIGITS = {
    "零": 0, "〇": 0, "○": 0,
    "一": 1, "壹": 1,
    "二": 2, "两": 2, "贰": 2, "貳": 2,
    "三": 3, "叁": 3, "參": 3,
    "四": 4, "肆": 4,
    "五": 5, "伍": 5,
    "六": 6, "陆": 6, "陸": 6,
    "七": 7, "柒": 7,
    "八": 8, "捌": 8,
    "九": 9, "玖": 9,
}
_UNITS = {"十": 10, "拾": 10, "百": 100, "佰": 100, "千": 1000, "仟": 1000}
_BIG = {"万": 10**4, "萬": 10**4, "亿": 10**8, "億": 10**8}

CN_NUMERAL_CHARS = "".join(_DIGITS) + "".join(_UNITS) + "".join(_BIG)
NUM = rf"(?:[0-9]+(?:\.[0-9]+)?|[{CN_NUMERAL_CHARS}]+)"


def normalize(text: str) -> str:
    """NFKC-fold (full-width digits, punctuation) and drop all whitespace."""
    return re.sub(r"\s+", "", unicodedata.normalize("NFKC", text))


def cn_to_int(s: str) -> int:
    """Convert a Chinese numeral (一万二千, 十五, 三千零五, 二〇二三) to an int."""
    if not s:
        raise ValueError("empty numeral")
    if all(ch in _DIGITS for ch in s):
        # positional spelling, e.g. 二〇二三
        value = 0
        for ch in s:
            value = value * 10 + _DIGITS[ch]
        return value
    total = 0
    section = 0
    pending: int | None = None
    for ch in s:
        if ch in _DIGITS:
            pending = _DIGITS[ch]
        elif ch in _UNITS:
            section += (1 if pending is None else pending) * _UNITS[ch]
            pending = None
        elif ch in _BIG:
            big = _BIG[ch]
            section += pending or 0
            pending = None
            if big == 10**8:
                total = (total + section) * big
            else:
                total += section * big
            section = 0
        else:
            raise ValueError(f"not a Chinese numeral character: {ch!r}")
    return total + section + (pending or 0)


def parse_number(s: str) -> float:
    """Arabic, Chinese, or mixed (1.5万) numeral to a number."""
    s = normalize(s).replace(",", "")
    m = re.fullmatch(r"([0-9]+(?:\.[0-9]+)?)([万萬亿億千仟百佰]?)", s)
    if m:
        mult = {"": 1, "万": 10**4, "萬": 10**4, "亿": 10**8, "億": 10**8,
                "千": 1000, "仟": 1000, "百": 100, "佰": 100}[m.group(2)]
        return float(m.group(1)) * mult
    return float(cn_to_int(s))


def _to_int(s: str) -> int:
    value = parse_number(s)
    if value != int(value):
        raise ValueError(f"non-integral value {s!r}")
    return int(value)


_DEATH = re.compile(r"死刑")
_LIFE = re.compile(r"无期徒刑")
_FIXED = re.compile(
    rf"(有期徒刑|拘役)(?:({NUM})年)?(?:[零又]?({NUM})个?月)?"
)
_NO_CUSTODY = re.compile(r"免予刑事处罚|免除刑事处罚|免于刑事处罚|单处罚金")


def _span_months(years: str | None, months: str | None) -> int | None:
    if years is None and months is None:
        return None
    total = 0
    if years:
        total += 12 * _to_int(years)
    if months:
        total += _to_int(months)
    return total


def find_duration(text: str) -> tuple[ImprisonmentTerm, int, int] | None:
    """Earliest sentencing phrase in ``text`` as (term, start, end), or None."""
    t = normalize(text)
    best: tuple[ImprisonmentTerm, int, int] | None = None

    def offer(term, start, end):
        nonlocal best
        if best is None or start < best[1]:
            best = (term, start, end)

    m = _DEATH.search(t)
    if m:
        offer(DeathPenalty(), m.start(), m.end())
    m = _LIFE.search(t)
    if m:
        offer(LifeImprisonment(), m.start(), m.end())
    for m in _FIXED.finditer(t):
        months = _span_months(m.group(2), m.group(3))
        if months is not None:
            offer(Months(months, detention=m.group(1) == "拘役"), m.start(), m.end())
            break
    m = _NO_CUSTODY.search(t)
    if m:
        offer(NoCustody(), m.start(), m.end())
    return best


def parse_duration(text: str) -> ImprisonmentTerm:
    """Parse a Chinese custodial-sentence phrase into an imprisonment term.

    Fixed-term imprisonment (有期徒刑) and criminal detention (拘役) both become
    ``Months``; 无期徒刑 and 死刑 (with or without reprieve) map to their own
    variants and 免予刑事处罚 / 单处罚金 to ``NoCustody``. The earliest phrase in
    the text wins.
    """
    if not text or not text.strip():
        raise UnparseableDuration("empty text")
    try:
        found = find_duration(text)
    except ValueError as exc:
        raise UnparseableDuration(f"{text!r}: {exc}") from exc
    if found is None:
        raise UnparseableDuration(f"no sentencing phrase in {text!r}")
    return found[0]


_PERIOD = re.compile(rf"(?:({NUM})年)?(?:[零又]?({NUM})个?月)?")


def parse_period_months(text: str) -> int | None:
    """Months in a bare period like 二年 or 一年六个月; None when there is none."""
    m = _PERIOD.match(normalize(text))
    if not m:
        return None
    return _span_months(m.group(1), m.group(2))


_AMOUNT = re.compile(rf"([0-9][0-9,]*(?:\.[0-9]+)?[万萬亿億]?|[{CN_NUMERAL_CHARS}]+)")


def parse_amount(text: str) -> int:
    """Yuan amount in a currency phrase (人民币五千元, 罚金3000元, 1.5万元)."""
    if not text or not text.strip():
        raise UnparseableAmount("empty text")
    t = normalize(text)
    matches = list(_AMOUNT.finditer(t))
    # prefer a numeral that is directly a yuan figure
    matches.sort(key=lambda m: (not t.startswith("元", m.end()), m.start()))
    for m in matches:
        token = m.group(1)
        if all(ch in "零〇○" for ch in token):
            continue
        try:
            return _to_int(token)
        except ValueError:
            continue
    raise UnparseableAmount(f"no numeral in {text!r}")


_LAW_TITLE = re.compile(r"《([^》]+)》")
_ARTICLE_NO = re.compile(rf"第({NUM})条")


def parse_article_refs(text: str) -> list[tuple[str, int]]:
    """Article citations from prose and from ``法名:条号`` lists.

    Handles 《中华人民共和国刑法》第二百六十四条、第六十七条 (the law name
    carries over to the following numbers), 刑法第264条 and 刑法:264.
    """
    t = normalize(text)
    out: list[tuple[str, int]] = []

    def add(law: str, num: str):
        law = re.sub(r"^(?:依照|依据|根据|按照|违反|适用|对照|参照|引用)", "", law)
        try:
            ref = (law.strip(), _to_int(num))
        except ValueError:
            return
        if ref[0] and ref[1] > 0 and ref not in out:
            out.append(ref)

    titles = list(_LAW_TITLE.finditer(t))
    for i, m in enumerate(titles):
        end = titles[i + 1].start() if i + 1 < len(titles) else len(t)
        tail = t[m.end():end]
        # stop at the first sentence break so stray numbers are not attributed
        stop = re.search(r"[。;；]", tail)
        if stop:
            tail = tail[: stop.start()]
        for a in _ARTICLE_NO.finditer(tail):
            add(m.group(1), a.group(1))
    stripped = _LAW_TITLE.sub("", t) if titles else t
    for m in re.finditer(rf"([一-鿿]{{1,30}}?法)第({NUM})条", stripped):
        add(m.group(1), m.group(2))
    for m in re.finditer(r"([一-鿿]{1,30}?法)[:：]([0-9]+)", t):
        add(m.group(1), m.group(2))
    return out
