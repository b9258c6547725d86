"""Single choke-point for every LLM call made by the pipeline."""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from string import Template
from typing import IO, Any, Callable

from ..errors import InvalidArgumentError, MalformedOutputError, NotFoundError
from .backends import Backend, LlmRequest
from .prompts import CORRECTION, DEFAULT_EXAMPLES, TEMPLATES, StageKind

DEFAULT_RUN = "default"


@dataclass
class LlmUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    calls: int = 0

    def __add__(self, other: "LlmUsage") -> "LlmUsage":
        return LlmUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
            self.calls + other.calls,
        )

    def as_dict(self) -> dict[str, int]:
        return {"prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
                "calls": self.calls}


@dataclass
class LlmExchange:
    run_id: str
    stage: StageKind
    attempt: int
    rendered_prompt: str
    raw_response: str
    parsed: Any
    ok: bool
    usage: LlmUsage
    error: str | None = None

    def as_record(self) -> dict:
        return {
            "run_id": self.run_id,
            "stage": self.stage.value,
            "attempt": self.attempt,
            "rendered_prompt": self.rendered_prompt,
            "raw_response": self.raw_response,
            "parsed": self.parsed if self.ok else None,
            "ok": self.ok,
            "error": self.error,
            "usage": self.usage.as_dict(),
        }


@dataclass
class UsageReport:
    per_stage: dict[str, LlmUsage] = field(default_factory=dict)
    total: LlmUsage = field(default_factory=LlmUsage)

    @classmethod
    def from_records(cls, records) -> "UsageReport":
        report = cls()
        for rec in records:
            u = rec["usage"]
            usage = LlmUsage(u["prompt_tokens"], u["completion_tokens"], u["calls"])
            report.per_stage[rec["stage"]] = report.per_stage.get(rec["stage"], LlmUsage()) + usage
            report.total = report.total + usage
        report.per_stage = dict(sorted(report.per_stage.items()))
        return report

    def as_dict(self) -> dict:
        return {"per_stage": {k: v.as_dict() for k, v in self.per_stage.items()},
                "total": self.total.as_dict()}


# --- output parsing -------------------------------------------------------

_FENCE = re.compile(r"^```[a-zA-Z]*\s*|\s*```$")


def extract_json(raw: str) -> Any:
    text = _FENCE.sub("", raw.strip()).strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    starts = [i for i in (text.find("["), text.find("{")) if i >= 0]
    if not starts:
        raise ValueError("no JSON value in response")
    value, _ = json.JSONDecoder().raw_decode(text[min(starts):])
    return value


def _nonempty_str(value: Any, name: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise ValueError(f"{name} must be a non-empty string")
    return value.strip()


def _parse_candidates(raw: str) -> list[dict]:
    data = extract_json(raw)
    if not isinstance(data, list):
        raise ValueError("expected a JSON list of triplets")
    out = []
    for item in data:
        if not isinstance(item, dict):
            raise ValueError("triplet must be an object")
        quals = item.get("qualifiers") or []
        if not isinstance(quals, list):
            raise ValueError("qualifiers must be a list")
        out.append({
            "subject": _nonempty_str(item.get("subject"), "subject"),
            "relation": _nonempty_str(item.get("relation"), "relation"),
            "object": _nonempty_str(item.get("object"), "object"),
            "subject_type": _nonempty_str(item.get("subject_type"), "subject_type"),
            "object_type": _nonempty_str(item.get("object_type"), "object_type"),
            "qualifiers": [_parse_qualifier(q) for q in quals],
        })
    return out


def _parse_qualifier(q: Any) -> dict:
    if not isinstance(q, dict):
        raise ValueError("qualifier must be an object")
    obj = q.get("object")
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        obj = str(obj)
    return {"relation": _nonempty_str(q.get("relation"), "qualifier relation"),
            "object": _nonempty_str(obj, "qualifier object")}


def _parse_type_selection(raw: str) -> dict:
    data = extract_json(raw)
    if not isinstance(data, dict):
        raise ValueError("expected a JSON object")
    return {"subject_type": _nonempty_str(data.get("subject_type"), "subject_type"),
            "object_type": _nonempty_str(data.get("object_type"), "object_type")}


def _parse_relation_selection(raw: str) -> dict:
    data = extract_json(raw)
    if not isinstance(data, dict):
        raise ValueError("expected a JSON object")
    out = {"relation": _nonempty_str(data.get("relation"), "relation")}
    orientation = data.get("orientation")
    if orientation is not None:
        if orientation not in ("forward", "inverse"):
            raise ValueError("orientation must be forward or inverse")
        out["orientation"] = orientation
    return out


def _single_line(raw: str) -> str:
    text = raw.strip()
    if not text:
        raise ValueError("empty response")
    if "\n" in text:
        raise ValueError("expected a single line")
    return text


def _parse_link(raw: str) -> str:
    text = _single_line(raw)
    if text.startswith('"'):
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text.strip('"')
        text = _nonempty_str(value, "entity name")
    return text


def _parse_string_list(raw: str) -> list[str]:
    data = extract_json(raw)
    if not isinstance(data, list):
        raise ValueError("expected a JSON list")
    return [_nonempty_str(x, "entity") for x in data]


def _parse_entity_dicts(raw: str) -> list[str]:
    data = extract_json(raw)
    if not isinstance(data, list):
        raise ValueError("expected a JSON list")
    out = []
    for item in data:
        if not isinstance(item, dict):
            raise ValueError("each element must be an object with key 'entity'")
        out.append(_nonempty_str(item.get("entity"), "entity"))
    return out


def _parse_text(raw: str) -> str:
    text = raw.strip()
    if not text:
        raise ValueError("empty response")
    return text


PARSERS: dict[StageKind, Callable[[str], Any]] = {
    StageKind.candidate_extraction: _parse_candidates,
    StageKind.type_selection: _parse_type_selection,
    StageKind.relation_selection: _parse_relation_selection,
    StageKind.entity_linking: _parse_link,
    StageKind.qa_entity_extraction: _parse_string_list,
    StageKind.qa_entity_linking: _parse_entity_dicts,
    StageKind.qa_subanswer: _parse_text,
    StageKind.qa_decompose: _parse_text,
    StageKind.qa_final_check: _single_line,
}


class Gateway:
    """Renders stage prompts, calls the backend, parses and retries.

    A ``validate`` callback passed to :meth:`complete` may raise
    ``ValueError`` to reject a well-formed but unacceptable answer (for
    example a choice outside the offered candidates); that takes the same
    retry path as unparseable output.
    """

    def __init__(
        self,
        backend: Backend,
        retry_budget: int = 3,
        temperature: float = 0.0,
        stage_temperatures: dict[StageKind, float] | None = None,
        extra_examples: dict[StageKind, str] | None = None,
        max_in_flight: int = 8,
        log_sink: IO[str] | None = None,
        run_id: str = DEFAULT_RUN,
    ) -> None:
        if retry_budget < 1:
            raise InvalidArgumentError("retry budget must be >= 1")
        self.backend = backend
        self.retry_budget = retry_budget
        self.temperature = temperature
        self.stage_temperatures = dict(stage_temperatures or {})
        self.extra_examples = dict(extra_examples or {})
        self.run_id = run_id
        self.log_sink = log_sink
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self._runs: dict[str, list[LlmExchange]] = {run_id: []}

    def start_run(self, run_id: str) -> None:
        with self._lock:
            self._runs.setdefault(run_id, [])
            self.run_id = run_id

    def render(self, stage: StageKind, variables: dict[str, str]) -> str:
        bound = dict(variables)
        examples = DEFAULT_EXAMPLES.get(stage, "") + self.extra_examples.get(stage, "")
        bound.setdefault("examples", examples)
        bound.setdefault("must_answer", "")
        try:
            return Template(TEMPLATES[stage]).substitute(bound)
        except KeyError as exc:
            raise InvalidArgumentError(f"missing placeholder {exc} for stage {stage.value}") from None

    def complete(
        self,
        stage: StageKind,
        variables: dict[str, str],
        validate: Callable[[Any], Any] | None = None,
    ) -> tuple[Any, LlmUsage]:
        """Returns ``(parsed, usage)``; usage sums every attempt."""
        stage = StageKind(stage)
        base = self.render(stage, variables)
        temperature = self.stage_temperatures.get(stage, self.temperature)
        usage = LlmUsage()
        raw = ""
        error: str | None = None
        for attempt in range(1, self.retry_budget + 1):
            prompt = base
            if attempt > 1:
                prompt += Template(CORRECTION).substitute(attempt=attempt, budget=self.retry_budget)
            request = LlmRequest(stage, prompt, temperature, dict(variables))
            with self._slots:
                reply = self.backend.generate(request)
            raw = reply.text
            step = LlmUsage(reply.prompt_tokens, reply.completion_tokens, 1)
            usage = usage + step
            try:
                parsed = PARSERS[stage](raw)
                if validate is not None:
                    checked = validate(parsed)
                    if checked is not None:
                        parsed = checked
            except (ValueError, TypeError, AttributeError) as exc:
                error = str(exc)
                self._record(LlmExchange(self.run_id, stage, attempt, prompt, raw, None,
                                         False, step, error))
                continue
            self._record(LlmExchange(self.run_id, stage, attempt, prompt, raw,
                                     _jsonable(parsed), True, step))
            return parsed, usage
        raise MalformedOutputError(
            f"{stage.value}: no valid output after {self.retry_budget} attempts",
            last_raw=raw, attempts=self.retry_budget, last_error=error, usage=usage,
        )

    def _record(self, exchange: LlmExchange) -> None:
        with self._lock:
            self._runs.setdefault(exchange.run_id, []).append(exchange)
            if self.log_sink is not None:
                self.log_sink.write(json.dumps(exchange.as_record(), ensure_ascii=False) + "\n")

    def exchanges(self, run_id: str | None = None) -> list[LlmExchange]:
        run_id = self.run_id if run_id is None else run_id
        with self._lock:
            if run_id not in self._runs:
                raise NotFoundError(f"unknown run {run_id!r}")
            return list(self._runs[run_id])

    def usage_report(self, run_id: str | None = None) -> UsageReport:
        return UsageReport.from_records(e.as_record() for e in self.exchanges(run_id))


def _jsonable(value: Any) -> Any:
    try:
        json.dumps(value)
        return value
    except TypeError:
        return repr(value)
