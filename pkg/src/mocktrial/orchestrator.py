"""Running trials: one case end to end, and batches with per-case isolation and run artifacts."""

from __future__ import annotations

import configparser
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import kernels
from .agents import (
    AgentSettings,
    AgentState,
    PromptLibrary,
    default_library,
    draft_judgment,
    init_strategies,
    new_agent,
    observe,
    reflect,
    respond,
    stenographer_line,
)
from .backend import Backend, RecordReplayBackend, RemoteBackend, ScriptedBackend, ScriptFixture
from .domain import AGENT_ROLES, CaseMaterials, Judgment, Role, Stage, TrialTranscript
from .procedure import (
    ProcedureConfig,
    Refusal,
    StageEnd,
    TrialEnd,
    TrialState,
    advance_stage,
    apply_utterance,
    load_scripts,
    next_directive,
    record_reflection,
    request_backtrack,
    start_trial,
)
from .retrieval import CaseCorpus, LawCorpus, load_corpora

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Bad configuration or input; the CLI maps it to exit code 2."""


# -- config ------------------------------------------------------------------------------


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "scripted"  # scripted | remote | replay | record
    script: str | None = None
    endpoint: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    api_key_env: str = "MOCKTRIAL_API_KEY"
    cassette: str | None = None
    timeout: float = 60.0
    retry_budget: int = 4
    rate_limit: float | None = None

    def __post_init__(self):
        if self.kind not in ("scripted", "remote", "replay", "record"):
            raise ConfigError(f"backend kind must be scripted, remote, replay or record, got {self.kind!r}")


@dataclass(frozen=True)
class RunConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    procedure: ProcedureConfig = field(default_factory=ProcedureConfig)
    agents: AgentSettings = field(default_factory=AgentSettings)
    laws: str | None = None
    law_aliases: str | None = None
    case_corpus: str | None = None
    stage_scripts: str | None = None
    prompt_dir: str | None = None
    output_dir: str = "runs"
    parallelism: int = 1
    seed: int = 0
    run_id: str | None = None

    def __post_init__(self):
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    def snapshot(self) -> dict:
        d = asdict(self)
        d["procedure"] = {k: v for k, v in d["procedure"].items() if k != "scripts"}
        return d


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


def load_run_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Read an INI file (sections run, procedure, backend, corpora, agents).

    Relative paths in the file resolve against the file's directory; keyword
    overrides (already-typed values, ``None`` meaning "not given") win.
    """
    cp = configparser.ConfigParser()
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cp.read(path, encoding="utf-8")
        base = path.parent

    def get(section: str, key: str, conv=str, default=None):
        if not cp.has_option(section, key):
            return default
        raw = cp.get(section, key).strip()
        if raw == "":
            return default
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None

    def rel(p):
        return None if p is None else str(base / p) if not os.path.isabs(p) else p

    try:
        q = get("procedure", "investigation_questions", int, 3)
        procedure = ProcedureConfig(
            debate_rounds=get("procedure", "debate_rounds", int, 3),
            prosecutor_questions=get("procedure", "prosecutor_questions", int, q),
            attorney_questions=get("procedure", "attorney_questions", int, q),
            judge_questioning=get("procedure", "judge_questioning", _bool, True),
            judge_interjections=get("procedure", "judge_interjections", _bool, False),
            backtrack_budget=get("procedure", "backtrack_budget", int, 1),
        )
        backend = BackendConfig(
            kind=get("backend", "kind", str, "scripted"),
            script=rel(get("backend", "script")),
            endpoint=get("backend", "endpoint", str, BackendConfig.endpoint),
            model=get("backend", "model", str, BackendConfig.model),
            api_key_env=get("backend", "api_key_env", str, BackendConfig.api_key_env),
            cassette=rel(get("backend", "cassette")),
            timeout=get("backend", "timeout", float, 60.0),
            retry_budget=get("backend", "retry_budget", int, 4),
            rate_limit=get("backend", "rate_limit", float, None),
        )
        agents = AgentSettings(
            temperature=get("agents", "temperature", float, 0.7),
            judge_temperature=get("agents", "judge_temperature", float, 0.0),
            max_tokens=get("agents", "max_tokens", int, 1024),
        )
        values = dict(
            backend=backend,
            procedure=procedure,
            agents=agents,
            laws=rel(get("corpora", "laws")),
            law_aliases=rel(get("corpora", "aliases")),
            case_corpus=rel(get("corpora", "cases")),
            stage_scripts=rel(get("procedure", "stage_scripts")),
            prompt_dir=rel(get("agents", "prompt_dir")),
            output_dir=rel(get("run", "output_dir", str, "runs")),
            parallelism=get("run", "parallelism", int, 1),
            seed=get("run", "seed", int, 0),
            run_id=get("run", "run_id"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    backend_over = {k[len("backend_"):]: v for k, v in overrides.items() if k.startswith("backend_") and v is not None}
    if backend_over:
        values["backend"] = BackendConfig(**{**asdict(values["backend"]), **backend_over})
    values.update({k: v for k, v in overrides.items() if not k.startswith("backend_") and v is not None})
    return RunConfig(**values)


def build_backend(cfg: RunConfig) -> Backend:
    b = cfg.backend
    if b.kind == "scripted":
        if not b.script:
            raise ConfigError("scripted backend needs a script fixture path")
        if not Path(b.script).exists():
            raise ConfigError(f"script fixture not found: {b.script}")
        return ScriptedBackend(ScriptFixture.load(b.script))
    if b.kind == "replay":
        if not b.cassette or not Path(b.cassette).exists():
            raise ConfigError(f"replay needs an existing cassette, got {b.cassette!r}")
        return RecordReplayBackend(None, b.cassette, "replay")
    remote = RemoteBackend(
        b.endpoint,
        b.model,
        api_key_env=b.api_key_env,
        timeout=b.timeout,
        retry_budget=b.retry_budget,
        rate_limit=b.rate_limit,
        seed=cfg.seed,
    )
    if b.kind == "record":
        if not b.cassette:
            raise ConfigError("record mode needs a cassette path")
        return RecordReplayBackend(remote, b.cassette, "record")
    return remote


# -- one trial ----------------------------------------------------------------------------


@dataclass
class TrialResult:
    case_id: str
    transcript: TrialTranscript
    judgment: Judgment
    document: str
    agents: dict[Role, AgentState]


class TrialFailure(Exception):
    def __init__(self, case_id: str, stage: Stage | None, cause: BaseException):
        self.case_id = case_id
        self.stage = stage
        self.cause = cause
        where = stage.value if stage else "setup"
        super().__init__(f"{case_id} failed during {where}: {type(cause).__name__}: {cause}")


def _label_prefix(state: TrialState) -> str:
    first = state.plan[0].label if state.plan else ""
    for prefix in ("backtrack:", "resume:"):
        if first.startswith(prefix):
            return prefix
    return ""


def run_trial(
    case: CaseMaterials,
    backend: Backend,
    law_corpus: LawCorpus | None,
    case_corpus: CaseCorpus | None,
    procedure: ProcedureConfig | None = None,
    settings: AgentSettings | None = None,
    library: PromptLibrary | None = None,
) -> TrialResult:
    """Drive one case through all stages; any error is wrapped in TrialFailure with the stage."""
    procedure = procedure or ProcedureConfig()
    settings = settings or AgentSettings()
    lib = library or default_library()
    state: TrialState | None = None
    try:
        state = start_trial(case, procedure)
        agents = {role: new_agent(role, case, lib) for role in AGENT_ROLES}
        for agent in agents.values():
            init_strategies(agent, law_corpus, case_corpus, backend, settings, lib)
        judgment: Judgment | None = None
        document = ""
        while True:
            step = next_directive(state)
            if isinstance(step, TrialEnd):
                advance_stage(state)
                break
            if isinstance(step, StageEnd):
                stage = state.stage
                prefix = _label_prefix(state)
                may_backtrack = stage is Stage.TRIAL_DEBATE and not state.in_excursion and state.backtrack_budget > 0
                for role in AGENT_ROLES:
                    reflect(agents[role], stage, law_corpus, case_corpus, backend, settings, lib,
                            label_prefix=prefix, allow_backtrack=may_backtrack and role is Role.JUDGE)
                    record_reflection(state, role)
                target = agents[Role.JUDGE].backtrack_request
                if may_backtrack and target is not None:
                    outcome = request_backtrack(state, target)
                    if isinstance(outcome, Refusal):
                        log.info("%s: backtrack refused (%s)", case.case_id, outcome.reason)
                        advance_stage(state)
                    else:
                        log.info("%s: judge returned to %s", case.case_id, target.value)
                else:
                    advance_stage(state)
                continue
            if step.role is Role.JUDGE and step.kind == "judgment":
                judgment, document = draft_judgment(agents[Role.JUDGE], state.transcript, backend, settings, lib)
                text = document
            elif step.role is Role.STENOGRAPHER:
                text = stenographer_line(case, step, lib)
            else:
                text = respond(agents[step.role], step, backend, settings, lib)
            apply_utterance(state, step.role, text)
            utterance = state.transcript.utterances[-1]
            for agent in agents.values():
                observe(agent, utterance)
        if judgment is None:
            raise RuntimeError("trial ended without a judgment")
        return TrialResult(case.case_id, state.transcript, judgment, document, agents)
    except TrialFailure:
        raise
    except Exception as exc:
        raise TrialFailure(case.case_id, state.stage if state else None, exc) from exc


# -- batches -------------------------------------------------------------------------------


@dataclass
class CaseStatus:
    case_id: str
    status: str  # ok | failed
    failed_stage: str | None = None
    error: str | None = None
    seconds: float = 0.0


@dataclass
class RunManifest:
    run_id: str
    run_dir: Path
    config: dict
    cases: list[CaseStatus]
    outputs: list[str]

    @property
    def failed(self) -> list[CaseStatus]:
        return [c for c in self.cases if c.status != "ok"]

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "kernel_backend": kernels.BACKEND,
            "config": self.config,
            "cases": [asdict(c) for c in self.cases],
            "outputs": self.outputs,
        }


def judgment_record(result: TrialResult) -> dict:
    rec = result.judgment.to_record(result.case_id)
    rec["articles"] = [f"{law}:{num}" for law, num in result.judgment.cited_articles]
    rec["document"] = result.document
    return rec


def _default_run_id() -> str:
    return datetime.now(timezone.utc).strftime("run-%Y%m%dT%H%M%S%fZ")


def simulate(
    cases: Sequence[CaseMaterials],
    config: RunConfig,
    backend: Backend | None = None,
    corpora: tuple[LawCorpus, CaseCorpus] | None = None,
) -> RunManifest:
    """Run every case, writing transcripts, judgments and a manifest under ``output_dir/run_id``."""
    ids = [c.case_id for c in cases]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ConfigError(f"duplicate case ids in batch: {dupes}")
    run_id = config.run_id or _default_run_id()
    run_dir = Path(config.output_dir) / run_id
    if run_dir.exists():
        raise ConfigError(f"run directory {run_dir} already exists; run directories are append-only, pick a new run_id")
    backend = backend or build_backend(config)
    if corpora is None:
        try:
            corpora = load_corpora(config.laws, config.case_corpus, config.law_aliases)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load corpora: {exc}") from None
    law_corpus, case_corpus = corpora
    procedure = config.procedure
    if config.stage_scripts:
        procedure = ProcedureConfig(**{**{k: v for k, v in asdict(procedure).items() if k != "scripts"},
                                       "scripts": load_scripts(config.stage_scripts)})
    lib = PromptLibrary(config.prompt_dir) if config.prompt_dir else default_library()

    (run_dir / "transcripts").mkdir(parents=True)
    (run_dir / "judgments").mkdir()

    def one(case: CaseMaterials) -> tuple[CaseStatus, list[str]]:
        t0 = time.perf_counter()
        try:
            result = run_trial(case, backend, law_corpus, case_corpus, procedure, config.agents, lib)
        except TrialFailure as exc:
            log.error("%s", exc)
            return CaseStatus(case.case_id, "failed", exc.stage.value if exc.stage else "setup",
                              f"{type(exc.cause).__name__}: {exc.cause}", round(time.perf_counter() - t0, 3)), []
        tpath = Path("transcripts") / f"{case.case_id}.jsonl"
        jpath = Path("judgments") / f"{case.case_id}.json"
        (run_dir / tpath).write_text(result.transcript.to_jsonl(), encoding="utf-8")
        (run_dir / jpath).write_text(json.dumps(judgment_record(result), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        return CaseStatus(case.case_id, "ok", seconds=round(time.perf_counter() - t0, 3)), [tpath.as_posix(), jpath.as_posix()]

    if config.parallelism == 1:
        results = [one(c) for c in cases]
    else:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(one, cases))
    statuses = [r[0] for r in results]
    outputs = sorted(p for r in results for p in r[1])
    manifest = RunManifest(run_id, run_dir, config.snapshot(), statuses, outputs)
    (run_dir / "manifest.json").write_text(json.dumps(manifest.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return manifest
