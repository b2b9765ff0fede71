"""Legal article lookup and similar-case search over local corpora."""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    AmbiguousLawName,
    ArticleNotFound,
    DuplicateArticle,
    MalformedRecord,
)

log = logging.getLogger(__name__)

BM25_K1 = 1.2
BM25_B = 0.75


@dataclass(frozen=True)
class LawArticle:
    law_name: str
    article_number: int
    text: str


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    charge_label: str
    facts: str
    judgment_summary: str

    def summary(self) -> str:
        return f"[{self.case_id}] {self.charge_label}：{self.judgment_summary}"


_CN_PREFIX = "中华人民共和国"


class LawCorpus:
    def __init__(self, articles=(), aliases: dict[str, str] | None = None):
        self._articles: dict[tuple[str, int], LawArticle] = {}
        for a in articles:
            key = (a.law_name, a.article_number)
            if key in self._articles:
                raise DuplicateArticle(f"duplicate article {a.law_name} 第{a.article_number}条")
            self._articles[key] = a
        self.law_names = sorted({name for name, _ in self._articles})
        self.aliases = dict(aliases or {})

    def __len__(self) -> int:
        return len(self._articles)

    def __iter__(self):
        return iter(self._articles.values())

    def resolve(self, law_name: str) -> str:
        """Canonical law name for ``law_name``; alias table first, then suffix match."""
        name = law_name.strip().strip("《》")
        if name in self.aliases:
            return self.aliases[name]
        if name in self.law_names:
            return name
        candidates = [n for n in self.law_names if n.endswith(name) or n == _CN_PREFIX + name]
        if len(candidates) == 1:
            return candidates[0]
        if len(candidates) > 1:
            raise AmbiguousLawName(f"{law_name!r} matches {candidates}")
        raise ArticleNotFound(f"unknown law {law_name!r}")

    def get_article(self, law_name: str, article_number: int) -> LawArticle:
        canonical = self.resolve(law_name)
        try:
            return self._articles[(canonical, int(article_number))]
        except KeyError:
            raise ArticleNotFound(f"{canonical} 第{article_number}条") from None


def get_article(corpus: LawCorpus, law_name: str, article_number: int) -> LawArticle:
    return corpus.get_article(law_name, article_number)


# -- tokenization -----------------------------------------------------------------

_CJK_RUN = re.compile(r"[㐀-䶿一-鿿豈-﫿]+")
_WORD = re.compile(r"[A-Za-z0-9]+")


def tokenize(text: str) -> list[str]:
    """CJK character bigrams (a lone CJK character stays a unigram) plus lowercased ASCII words."""
    tokens: list[str] = []
    for run in _CJK_RUN.findall(text):
        if len(run) == 1:
            tokens.append(run)
        else:
            tokens.extend(run[i : i + 2] for i in range(len(run) - 1))
    tokens.extend(w.lower() for w in _WORD.findall(text))
    return tokens


@dataclass
class CaseCorpus:
    """BM25 index (Lucene-style non-negative idf) over facts + judgment summary."""

    records: list[CaseRecord]
    k1: float = BM25_K1
    b: float = BM25_B
    _postings: dict[str, tuple[np.ndarray, np.ndarray]] = field(init=False, repr=False)
    _doc_len: np.ndarray = field(init=False, repr=False)
    _avgdl: float = field(init=False, repr=False)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.case_id in seen:
                raise ValueError(f"duplicate case_id {r.case_id!r}")
            seen.add(r.case_id)
        lists: dict[str, tuple[list[int], list[int]]] = {}
        lens = []
        for i, rec in enumerate(self.records):
            toks = tokenize(rec.facts + "\n" + rec.judgment_summary)
            lens.append(len(toks))
            for term, tf in Counter(toks).items():
                ids, tfs = lists.setdefault(term, ([], []))
                ids.append(i)
                tfs.append(tf)
        self._postings = {
            t: (np.asarray(ids, dtype=np.int64), np.asarray(tfs, dtype=np.float64))
            for t, (ids, tfs) in lists.items()
        }
        self._doc_len = np.asarray(lens, dtype=np.float64)
        self._avgdl = float(self._doc_len.mean()) if lens and self._doc_len.mean() > 0 else 1.0

    def __len__(self) -> int:
        return len(self.records)

    def idf(self, term: str) -> float:
        n = len(self._postings[term][0]) if term in self._postings else 0
        N = len(self.records)
        return math.log(1.0 + (N - n + 0.5) / (n + 0.5))

    def scores(self, query: str) -> np.ndarray:
        """BM25 score of every record; each query token occurrence contributes once."""
        ids, tfs, weights = [], [], []
        for term in tokenize(query):
            if term not in self._postings:
                continue
            d, tf = self._postings[term]
            ids.append(d)
            tfs.append(tf)
            weights.append(np.full(d.shape, self.idf(term)))
        if not ids:
            return np.zeros(len(self.records))
        return kernels.bm25_accumulate(
            np.concatenate(ids), np.concatenate(tfs), np.concatenate(weights),
            self._doc_len, self._avgdl, self.k1, self.b,
        )

    def search(self, query: str, k: int = 5) -> list[tuple[CaseRecord, float]]:
        if k < 1:
            raise ValueError("k must be >= 1")
        s = self.scores(query)
        order = sorted(range(len(self.records)), key=lambda i: (-s[i], self.records[i].case_id))
        return [(self.records[i], float(s[i])) for i in order[:k]]


def search_cases(corpus: CaseCorpus, query: str, k: int = 5) -> list[tuple[CaseRecord, float]]:
    return corpus.search(query, k)


# -- loading ------------------------------------------------------------------------


def _read_jsonl(path: Path, required: tuple[str, ...]):
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(path, line_no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise MalformedRecord(path, line_no, "record is not an object")
            missing = [k for k in required if k not in rec]
            if missing:
                raise MalformedRecord(path, line_no, "missing fields " + ", ".join(missing))
            yield line_no, rec


def load_law_corpus(path: str | Path, alias_path: str | Path | None = None) -> LawCorpus:
    path = Path(path)
    articles: dict[tuple[str, int], int] = {}
    out = []
    for line_no, rec in _read_jsonl(path, ("law_name", "article_number", "text")):
        num = rec["article_number"]
        if not isinstance(num, int) or isinstance(num, bool) or num <= 0:
            raise MalformedRecord(path, line_no, f"article_number must be a positive integer, got {num!r}")
        key = (rec["law_name"], num)
        if key in articles:
            raise DuplicateArticle(
                f"{path}:{line_no}: {key[0]} 第{key[1]}条 already defined on line {articles[key]}"
            )
        articles[key] = line_no
        out.append(LawArticle(rec["law_name"], num, rec["text"]))
    aliases = load_aliases(alias_path) if alias_path else {}
    return LawCorpus(out, aliases)


def load_aliases(path: str | Path) -> dict[str, str]:
    def no_dupes(pairs):
        table: dict[str, str] = {}
        for k, v in pairs:
            if k in table and table[k] != v:
                raise AmbiguousLawName(f"alias {k!r} maps to both {table[k]!r} and {v!r}")
            table[k] = v
        return table

    with open(path, encoding="utf-8") as f:
        return json.load(f, object_pairs_hook=no_dupes)


def load_case_corpus(path: str | Path) -> CaseCorpus:
    path = Path(path)
    seen: dict[str, int] = {}
    records = []
    for line_no, rec in _read_jsonl(path, ("case_id", "charge_label", "facts", "judgment_summary")):
        if rec["case_id"] in seen:
            raise MalformedRecord(path, line_no, f"duplicate case_id {rec['case_id']!r} (line {seen[rec['case_id']]})")
        seen[rec["case_id"]] = line_no
        records.append(CaseRecord(rec["case_id"], rec["charge_label"], rec["facts"], rec["judgment_summary"]))
    return CaseCorpus(records)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("mocktrial") / "data" / name))


def load_corpora(
    law_path: str | Path | None = None,
    case_path: str | Path | None = None,
    alias_path: str | Path | None = None,
) -> tuple[LawCorpus, CaseCorpus]:
    """Load the law and case corpora; any path left as None uses the bundled sample."""
    if law_path is None:
        law_path = bundled_path("laws.jsonl")
        if alias_path is None:
            alias_path = bundled_path("law_aliases.json")
    if case_path is None:
        case_path = bundled_path("cases.jsonl")
    return load_law_corpus(law_path, alias_path), load_case_corpus(case_path)
