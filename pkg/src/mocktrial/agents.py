"""Courtroom agents: profile, two-tier memory, strategies, responding and reflection."""

from __future__ import annotations

import json
import logging
import re
import string
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .backend import Backend, ChatMessage, CompletionRequest, RequestTag
from .domain import ACTIVE_STAGES, CaseMaterials, Judgment, PartySide, Role, Stage, TrialTranscript, Utterance
from .errors import (
    AmbiguousLawName,
    ArticleNotFound,
    BackendFailure,
    EmptyCompletion,
    ProcedureError,
    VerdictParseFailure,
)
from .judgment import parse_verdict_block
from .parsing import parse_article_refs
from .procedure import BACKTRACK_TARGETS, Directive
from .retrieval import CaseCorpus, LawCorpus

log = logging.getLogger(__name__)


class StrategyKind(str, Enum):
    ATTACK = "Attack"
    DEFENSE = "Defense"
    INVESTIGATION = "Investigation"


ROLE_STRATEGIES: dict[Role, tuple[StrategyKind, ...]] = {
    Role.PROSECUTOR: (StrategyKind.ATTACK, StrategyKind.DEFENSE),
    Role.ATTORNEY: (StrategyKind.ATTACK, StrategyKind.DEFENSE),
    Role.DEFENDANT: (StrategyKind.DEFENSE,),
    Role.JUDGE: (StrategyKind.INVESTIGATION,),
    Role.STENOGRAPHER: (),
}

PRETRIAL = "PreTrial"
_BACKTRACK_TOKEN = re.compile(r"\[\[BACKTRACK:(\w+)\]\]")


# -- prompt library -------------------------------------------------------------------


class PromptLibrary:
    """Template files (``string.Template`` syntax) plus role profiles and labels.

    A directory passed in only needs the files it wants to override; anything
    missing falls back to the bundled copy.
    """

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        self._bundled = resources.files("mocktrial") / "prompts"
        self.profiles = json.loads(self._read("profiles.json"))
        self.labels = json.loads(self._read("labels.json"))
        self._templates: dict[str, string.Template] = {}

    def _read(self, name: str) -> str:
        if self.directory is not None and (self.directory / name).exists():
            return (self.directory / name).read_text(encoding="utf-8")
        return (self._bundled / name).read_text(encoding="utf-8")

    def render(self, name: str, **values) -> str:
        if name not in self._templates:
            self._templates[name] = string.Template(self._read(name + ".txt"))
        return self._templates[name].substitute(**values).strip()

    def title(self, role: Role) -> str:
        return self.profiles[Role(role).value]["title"]

    def stage_name(self, stage: Stage) -> str:
        return self.labels["stage_names"][Stage(stage).value]

    def kind_name(self, kind: StrategyKind) -> str:
        return self.labels["strategy_kinds"][StrategyKind(kind).value]["name"]

    def kind_desc(self, kind: StrategyKind) -> str:
        return self.labels["strategy_kinds"][StrategyKind(kind).value]["desc"]

    @property
    def empty(self) -> str:
        return self.labels["empty_section"]


@lru_cache(maxsize=1)
def default_library() -> PromptLibrary:
    return PromptLibrary()


# -- agent state --------------------------------------------------------------------


@dataclass(frozen=True)
class Profile:
    role: Role
    title: str
    base_task: str
    stage_tasks: dict[Stage, str]
    case_id: str

    def __post_init__(self):
        if not self.base_task.strip():
            raise ValueError("base_task must be non-empty")
        missing = [s.value for s in ACTIVE_STAGES if s not in self.stage_tasks]
        if missing:
            raise ValueError(f"stage_tasks missing {missing}")


@dataclass
class ShortTermMemory:
    buffer: list[Utterance] = field(default_factory=list)


@dataclass
class LongTermMemory:
    summaries: list[tuple[Stage, str]] = field(default_factory=list)


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind
    content: str
    cited_articles: tuple[tuple[str, int], ...] = ()
    similar_cases: tuple[str, ...] = ()
    version: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if self.version < 1:
            raise ValueError("version starts at 1")


@dataclass(frozen=True)
class AgentSettings:
    temperature: float = 0.7
    judge_temperature: float = 0.0  # used for the judgment document
    max_tokens: int = 1024
    judgment_max_tokens: int = 2048
    cases_per_query: int = 3
    max_similar_cases: int = 5
    empty_retries: int = 1
    fallback_summary_chars: int = 400


@dataclass
class AgentState:
    profile: Profile
    case: CaseMaterials
    short_term: ShortTermMemory = field(default_factory=ShortTermMemory)
    long_term: LongTermMemory = field(default_factory=LongTermMemory)
    strategies: list[Strategy] = field(default_factory=list)
    reflections_done: int = 0
    backtrack_request: Stage | None = None

    @property
    def role(self) -> Role:
        return self.profile.role

    def __post_init__(self):
        kinds = tuple(s.kind for s in self.strategies)
        if self.strategies and kinds != ROLE_STRATEGIES[self.role]:
            raise ValueError(f"{self.role.value} cannot hold strategies {kinds}")


def init_profile(role: Role, case: CaseMaterials, library: PromptLibrary | None = None) -> Profile:
    lib = library or default_library()
    role = Role(role)
    spec = lib.profiles[role.value]
    return Profile(
        role=role,
        title=spec["title"],
        base_task=spec["base_task"],
        stage_tasks={Stage(k): v for k, v in spec["stage_tasks"].items()},
        case_id=case.case_id,
    )


def new_agent(role: Role, case: CaseMaterials, library: PromptLibrary | None = None) -> AgentState:
    return AgentState(init_profile(role, case, library), case)


# -- prompt pieces --------------------------------------------------------------------


def _evidence_text(case: CaseMaterials) -> str:
    side = {PartySide.PROSECUTION: "控方", PartySide.DEFENSE: "辩方"}
    return "\n".join(
        f"- [{e.evidence_id}] {e.title}（{side[e.submitted_by]}提交）：{e.content}" for e in case.evidence
    )


def profile_text(profile: Profile, case: CaseMaterials, stage: Stage | None, lib: PromptLibrary) -> str:
    return lib.render(
        "profile",
        title=profile.title,
        base_task=profile.base_task,
        stage_task=profile.stage_tasks[stage] if stage in profile.stage_tasks else "庭前准备诉讼策略。",
        case_id=case.case_id,
        charge_label=case.charge_label,
        defendant_info=case.defendant_info,
        indictment=case.indictment,
        evidence=_evidence_text(case) or lib.empty,
    )


def _long_term_text(agent: AgentState, lib: PromptLibrary) -> str:
    if not agent.long_term.summaries:
        return lib.empty
    return "\n".join(f"【{lib.stage_name(s)}】{text}" for s, text in agent.long_term.summaries)


def _utterances_text(utterances, lib: PromptLibrary) -> str:
    if not utterances:
        return lib.empty
    return "\n".join(f"{lib.title(u.role)}：{u.text}" for u in utterances)


def _strategies_text(agent: AgentState, lib: PromptLibrary) -> str:
    if not agent.strategies:
        return lib.empty
    return "\n\n".join(f"【{lib.kind_name(s.kind)}·第{s.version}版】\n{s.content}" for s in agent.strategies)


def _articles_text(corpus: LawCorpus | None, refs) -> str:
    lines = []
    for law, num in refs:
        try:
            art = corpus.get_article(law, num) if corpus is not None else None
        except (ArticleNotFound, AmbiguousLawName):
            art = None
        lines.append(f"《{law}》第{num}条：{art.text}" if art else f"《{law}》第{num}条")
    return "\n".join(lines)


def build_prompt(
    agent: AgentState, directive: Directive, library: PromptLibrary | None = None
) -> tuple[ChatMessage, ...]:
    """Messages for one turn: profile, long-term, short-term, strategies, hint (in that order).

    Pure: equal agent state and directive give byte-identical messages.
    """
    lib = library or default_library()
    system = profile_text(agent.profile, agent.case, directive.stage, lib)
    user = lib.render(
        "respond",
        long_term=_long_term_text(agent, lib),
        short_term=_utterances_text(agent.short_term.buffer, lib),
        strategies=_strategies_text(agent, lib),
        hint=directive.hint,
        title=agent.profile.title,
    )
    return (ChatMessage("system", system), ChatMessage("user", user))


def _ask(
    backend: Backend,
    messages,
    tag: RequestTag,
    temperature: float,
    max_tokens: int,
    retries: int,
) -> str:
    req = CompletionRequest(tuple(messages), tag, temperature, max_tokens)
    for _ in range(retries + 1):
        text = backend.complete(req).strip()
        if text:
            return text
        log.warning("%s: empty completion", tag)
    raise EmptyCompletion(f"{tag}: empty completion after {retries + 1} attempts")


def defendant_name(case: CaseMaterials) -> str:
    head = re.split(r"[，,。；;\s]", case.defendant_info.strip(), maxsplit=1)[0]
    head = head.removeprefix("被告人")
    return head or "被告人"


def stenographer_line(case: CaseMaterials, directive: Directive, library: PromptLibrary | None = None) -> str:
    """Template-driven clerk turn; never touches a backend."""
    lib = library or default_library()
    if directive.kind == "announce-rules":
        return lib.render("stenographer", defendant_name=defendant_name(case))
    return directive.hint


def respond(
    agent: AgentState,
    directive: Directive,
    backend: Backend,
    settings: AgentSettings | None = None,
    library: PromptLibrary | None = None,
) -> str:
    if Role(directive.role) is not agent.role:
        raise ProcedureError(f"directive for {directive.role.value} given to {agent.role.value}")
    settings = settings or AgentSettings()
    if agent.role is Role.STENOGRAPHER:
        return stenographer_line(agent.case, directive, library)
    messages = build_prompt(agent, directive, library)
    tag = RequestTag(agent.case.case_id, directive.stage.value, agent.role.value, directive.label)
    return _ask(backend, messages, tag, settings.temperature, settings.max_tokens, settings.empty_retries)


def observe(agent: AgentState, utterance: Utterance) -> AgentState:
    agent.short_term.buffer.append(utterance)
    return agent


# -- strategies ----------------------------------------------------------------------


def _lines(text: str) -> list[str]:
    out = []
    for line in text.splitlines():
        line = re.sub(r"^\s*(?:[-*•]|\d+[.、)）])\s*", "", line).strip()
        if line:
            out.append(line)
    return out


def _retrieve_cases(case_tool: CaseCorpus | None, queries: list[str], settings: AgentSettings, exclude: str) -> list[str]:
    if case_tool is None or len(case_tool) == 0:
        log.warning("no case corpus; similar cases left empty")
        return []
    seen: dict[str, str] = {}
    for q in queries:
        for rec, score in case_tool.search(q, settings.cases_per_query):
            if score <= 0 or rec.case_id == exclude or rec.case_id in seen:
                continue
            seen[rec.case_id] = rec.summary()
    if not seen:
        log.warning("case search returned nothing for %d queries", len(queries))
    return list(seen.values())[: settings.max_similar_cases]


def _resolve_articles(article_tool: LawCorpus | None, refs) -> list[tuple[str, int]]:
    out: list[tuple[str, int]] = []
    for law, num in refs:
        if article_tool is None:
            break
        try:
            art = article_tool.get_article(law, num)
        except (ArticleNotFound, AmbiguousLawName) as exc:
            log.warning("article lookup miss: %s", exc)
            continue
        key = (art.law_name, art.article_number)
        if key not in out:
            out.append(key)
    return out


def init_strategies(
    agent: AgentState,
    article_tool: LawCorpus | None,
    case_tool: CaseCorpus | None,
    backend: Backend,
    settings: AgentSettings | None = None,
    library: PromptLibrary | None = None,
) -> list[Strategy]:
    """Generate the role's strategies from the case, retrieved articles and similar cases."""
    kinds = ROLE_STRATEGIES[agent.role]
    if not kinds:
        agent.strategies = []
        return []
    settings = settings or AgentSettings()
    lib = library or default_library()
    case = agent.case

    def tag(turn: str) -> RequestTag:
        return RequestTag(case.case_id, PRETRIAL, agent.role.value, turn)

    def ask(turn: str, prompt: str) -> str:
        return _ask(backend, [ChatMessage("user", prompt)], tag(turn), settings.temperature, settings.max_tokens, settings.empty_retries)

    fields = dict(
        title=agent.profile.title,
        charge_label=case.charge_label,
        defendant_info=case.defendant_info,
        indictment=case.indictment,
    )
    queries = _lines(ask("case-queries", lib.render("strategy_queries", **fields)))
    similar = _retrieve_cases(case_tool, queries, settings, case.case_id)
    refs = parse_article_refs(ask("article-titles", lib.render("article_titles", **fields)))
    articles = _resolve_articles(article_tool, refs)
    if refs and not articles:
        log.warning("%s: none of %d proposed articles resolved", agent.role.value, len(refs))

    profile = profile_text(agent.profile, case, None, lib)
    strategies = []
    for kind in kinds:
        prompt = lib.render(
            "strategy",
            profile=profile,
            articles=_articles_text(article_tool, articles) or lib.empty,
            cases="\n".join(similar) or lib.empty,
            kind_name=lib.kind_name(kind),
            kind_desc=lib.kind_desc(kind),
        )
        content = ask(f"strategy:{kind.value}", prompt)
        strategies.append(Strategy(kind, content, tuple(articles), tuple(similar), 1))
    agent.strategies = strategies
    return strategies


# -- reflection --------------------------------------------------------------------------


def fallback_summary(agent: AgentState, stage: Stage, settings: AgentSettings, lib: PromptLibrary) -> str:
    """Verbatim transcript of the stage cut to a fixed length; used when reflection fails."""
    text = "；".join(f"{lib.title(u.role)}：{u.text}" for u in agent.short_term.buffer)
    limit = settings.fallback_summary_chars
    return text if len(text) <= limit else text[: limit - 1] + "…"


def _take_backtrack(text: str) -> tuple[str, Stage | None]:
    target = None
    for m in _BACKTRACK_TOKEN.finditer(text):
        try:
            cand = Stage(m.group(1))
        except ValueError:
            continue
        if cand in BACKTRACK_TARGETS and target is None:
            target = cand
    return _BACKTRACK_TOKEN.sub("", text).strip(), target


def reflect(
    agent: AgentState,
    stage: Stage,
    article_tool: LawCorpus | None,
    case_tool: CaseCorpus | None,
    backend: Backend,
    settings: AgentSettings | None = None,
    library: PromptLibrary | None = None,
    *,
    label_prefix: str = "",
    allow_backtrack: bool = False,
) -> AgentState:
    """End-of-stage routine: revise strategies, fold memory into a summary, clear the buffer.

    On a backend failure the strategies stay as they were (no version bump) and
    the summary is a truncated verbatim record; the buffer is cleared either way.
    """
    settings = settings or AgentSettings()
    lib = library or default_library()
    stage = Stage(stage)
    case = agent.case
    agent.backtrack_request = None

    def tag(turn: str) -> RequestTag:
        return RequestTag(case.case_id, stage.value, agent.role.value, label_prefix + turn)

    def ask(turn: str, prompt: str) -> str:
        return _ask(backend, [ChatMessage("user", prompt)], tag(turn), settings.temperature, settings.max_tokens, settings.empty_retries)

    short = _utterances_text(agent.short_term.buffer, lib)
    long_ = _long_term_text(agent, lib)
    try:
        revised = []
        if agent.strategies:
            profile = profile_text(agent.profile, case, stage, lib)
            query = " ".join(u.text for u in agent.short_term.buffer) or case.indictment
            fresh_cases = _retrieve_cases(case_tool, [query], settings, case.case_id)
            spoken_refs = parse_article_refs(" ".join(u.text for u in agent.short_term.buffer))
            for s in agent.strategies:
                articles = list(s.cited_articles)
                for ref in _resolve_articles(article_tool, spoken_refs):
                    if ref not in articles:
                        articles.append(ref)
                similar = list(dict.fromkeys(list(s.similar_cases) + fresh_cases))[: settings.max_similar_cases]
                wants_token = allow_backtrack and s.kind is StrategyKind.INVESTIGATION
                content = ask(
                    f"reflect:{s.kind.value}",
                    lib.render(
                        "reflect_strategy",
                        profile=profile,
                        long_term=long_,
                        stage_name=lib.stage_name(stage),
                        short_term=short,
                        kind_name=lib.kind_name(s.kind),
                        version=s.version,
                        content=s.content,
                        articles=_articles_text(article_tool, articles) or lib.empty,
                        cases="\n".join(similar) or lib.empty,
                        control_hint=lib.labels["backtrack_hint"] if wants_token else "",
                    ),
                )
                content, target = _take_backtrack(content)
                if wants_token and target is not None:
                    agent.backtrack_request = target
                revised.append(replace(s, content=content or s.content, cited_articles=tuple(articles),
                                       similar_cases=tuple(similar), version=s.version + 1))
        summary = ask(
            "reflect:summary",
            lib.render("summarize", title=agent.profile.title, stage_name=lib.stage_name(stage), long_term=long_, short_term=short),
        )
    except BackendFailure as exc:
        log.warning("%s/%s reflection on %s failed (%s); keeping strategies, truncating memory",
                    case.case_id, agent.role.value, stage.value, exc)
        agent.backtrack_request = None
        agent.long_term.summaries.append((stage, fallback_summary(agent, stage, settings, lib)))
        agent.short_term.buffer.clear()
        return agent
    agent.strategies = revised
    agent.long_term.summaries.append((stage, summary))
    agent.short_term.buffer.clear()
    agent.reflections_done += 1
    return agent


# -- judgment ----------------------------------------------------------------------------


def draft_judgment(
    judge: AgentState,
    transcript: TrialTranscript,
    backend: Backend,
    settings: AgentSettings | None = None,
    library: PromptLibrary | None = None,
    *,
    label: str = "judgment",
) -> tuple[Judgment, str]:
    """Ask the judge for the judgment document and parse its verdict block (one reprompt)."""
    if judge.role is not Role.JUDGE:
        raise ProcedureError("only the judge drafts the judgment")
    final = [u for u in transcript.utterances if u.stage is Stage.FINAL_STATEMENT]
    if not any(u.role is Role.DEFENDANT and u.directive_kind == "allocution" for u in final):
        raise ProcedureError("judgment requested before the defendant's allocution")
    settings = settings or AgentSettings()
    lib = library or default_library()
    case = judge.case
    debate = [u for u in transcript.utterances if u.stage is Stage.TRIAL_DEBATE and u.role in (Role.PROSECUTOR, Role.ATTORNEY)]
    system = profile_text(judge.profile, case, Stage.FINAL_STATEMENT, lib)
    user = lib.render(
        "judgment",
        long_term=_long_term_text(judge, lib),
        short_term=_utterances_text(judge.short_term.buffer, lib),
        arguments=_utterances_text(debate, lib),
        strategies=_strategies_text(judge, lib),
    )
    messages = [ChatMessage("system", system), ChatMessage("user", user)]
    tag = RequestTag(case.case_id, Stage.FINAL_STATEMENT.value, Role.JUDGE.value, label)
    doc = _ask(backend, messages, tag, settings.judge_temperature, settings.judgment_max_tokens, settings.empty_retries)
    try:
        return parse_verdict_block(doc), doc
    except VerdictParseFailure as exc:
        log.warning("%s: verdict block unusable (%s); reprompting once", case.case_id, exc)
        messages += [ChatMessage("assistant", doc), ChatMessage("user", lib.render("judgment_retry", error=str(exc)))]
    doc = _ask(backend, messages, tag._replace(turn=label + "#retry"), settings.judge_temperature,
               settings.judgment_max_tokens, settings.empty_retries)
    try:
        return parse_verdict_block(doc), doc
    except VerdictParseFailure as exc:
        raise VerdictParseFailure(f"{case.case_id}: {exc}", raw=doc) from None
