"""Turn a raw case document into trial input materials with a model-assisted extraction."""

from __future__ import annotations

import json
import logging
import re

from .agents import PromptLibrary, default_library
from .backend import Backend, ChatMessage, CompletionRequest, RequestTag
from .domain import CaseMaterials, EvidenceItem, PartySide, validate_case
from .errors import ExtractionFailure, ExtractionIncomplete, InvalidCase

log = logging.getLogger(__name__)

COMPONENTS = ("defendant_info", "indictment", "evidence")
REVIEW_NOTICE = "extracted materials are machine-generated; have a legal expert review them before use"


def _json_object(text: str) -> dict:
    fenced = re.search(r"```(?:json)?\s*(\{.*?\})\s*```", text, re.S)
    candidate = fenced.group(1) if fenced else text[text.find("{") : text.rfind("}") + 1]
    try:
        data = json.loads(candidate)
    except json.JSONDecodeError as exc:
        raise ExtractionFailure(f"extraction output is not a JSON object ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ExtractionFailure("extraction output is not a JSON object")
    return data


def extract_case(
    document: str,
    case_id: str,
    backend: Backend,
    library: PromptLibrary | None = None,
) -> CaseMaterials:
    """Ask the backend for defendant info, indictment and evidence; validate the result."""
    lib = library or default_library()
    prompt = lib.render("ingest", document=document)
    req = CompletionRequest((ChatMessage("user", prompt),), RequestTag(case_id, "ingest", "system", "extract"), 0.0, 2048)
    data = _json_object(backend.complete(req))

    evidence = []
    for i, item in enumerate(data.get("evidence") or [], start=1):
        if not isinstance(item, dict) or not str(item.get("content", "")).strip():
            continue
        side = str(item.get("submitted_by", "prosecution")).strip().lower()
        if side not in (PartySide.PROSECUTION.value, PartySide.DEFENSE.value):
            side = PartySide.PROSECUTION.value
        evidence.append(
            EvidenceItem(
                evidence_id=str(item.get("evidence_id") or f"E{i}"),
                title=str(item.get("title") or f"证据{i}"),
                content=str(item["content"]),
                submitted_by=side,
            )
        )
    case = CaseMaterials(
        case_id=case_id,
        charge_label=str(data.get("charge_label", "")).strip(),
        defendant_info=str(data.get("defendant_info", "")).strip(),
        indictment=str(data.get("indictment", "")).strip(),
        evidence=tuple(evidence),
    )
    missing = [name for name, value in zip(COMPONENTS, (case.defendant_info, case.indictment, case.evidence)) if not value]
    if missing:
        raise ExtractionIncomplete(missing)
    violations = validate_case(case)
    if violations:
        raise InvalidCase(violations)
    log.warning("%s: %s", case_id, REVIEW_NOTICE)
    return case
