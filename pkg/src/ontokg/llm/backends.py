"""LLM backends: remote chat-completions, scripted fixture replay, callables."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol

import httpx

from ..errors import FixtureMissError, InvalidArgumentError, TransportError
from .prompts import StageKind

logger = logging.getLogger(__name__)


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def whitespace_tokens(text: str) -> int:
    """Approximate token count used when a backend reports no usage."""
    return len(text.split())


@dataclass(frozen=True)
class LlmRequest:
    stage: StageKind
    prompt: str
    temperature: float = 0.0
    # Template bindings; only callable backends look at these.
    variables: dict[str, str] = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class BackendReply:
    text: str
    prompt_tokens: int
    completion_tokens: int


class Backend(Protocol):
    backend_id: str

    def generate(self, request: LlmRequest) -> BackendReply: ...


class HttpChatBackend:
    """Chat-completions endpoint (POST model/messages/temperature)."""

    def __init__(
        self,
        url: str,
        model: str,
        token_env: str = "ONTOKG_LLM_TOKEN",
        timeout: float = 120.0,
        max_retries: int = 2,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.url = url
        self.model = model
        self.backend_id = f"http:{model}"
        self._token = os.environ.get(token_env)
        self._max_retries = max_retries
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def generate(self, request: LlmRequest) -> BackendReply:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        }
        headers = {"Authorization": f"Bearer {self._token}"} if self._token else {}
        last: Exception | None = None
        for _ in range(self._max_retries + 1):
            try:
                resp = self._client.post(self.url, json=payload, headers=headers)
                resp.raise_for_status()
                data = resp.json()
                break
            except (httpx.TransportError, httpx.HTTPStatusError, ValueError) as exc:
                last = exc
                logger.warning("chat request failed: %s", exc)
        else:
            raise TransportError(f"chat backend unreachable: {last}")
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise TransportError(f"unexpected chat response shape: {str(data)[:200]}") from None
        usage = data.get("usage") or {}
        return BackendReply(
            text,
            int(usage.get("prompt_tokens", whitespace_tokens(request.prompt))),
            int(usage.get("completion_tokens", whitespace_tokens(text))),
        )


class ScriptedBackend:
    """Replays fixture responses keyed by (stage, SHA-256 of the prompt).

    Fixture files are JSON Lines with fields ``stage``, ``prompt_sha256``,
    ``response_text``, ``prompt_tokens`` and ``completion_tokens``. Prompts
    without a record raise :class:`FixtureMissError`.
    """

    def __init__(self, records: Iterable[dict], backend_id: str = "scripted") -> None:
        self.backend_id = backend_id
        self._records: dict[tuple[str, str], dict] = {}
        for rec in records:
            key = (StageKind(rec["stage"]).value, rec["prompt_sha256"])
            if key in self._records and self._records[key] != rec:
                raise InvalidArgumentError(f"conflicting fixture records for {key}")
            self._records[key] = rec

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        return cls(records, backend_id=f"scripted:{path.name}")

    def __len__(self) -> int:
        return len(self._records)

    def generate(self, request: LlmRequest) -> BackendReply:
        sha = prompt_sha256(request.prompt)
        rec = self._records.get((request.stage.value, sha))
        if rec is None:
            raise FixtureMissError(
                f"no fixture for stage {request.stage.value} prompt {sha[:12]}: "
                f"{request.prompt[-200:]!r}"
            )
        text = rec["response_text"]
        pt = rec.get("prompt_tokens")
        ct = rec.get("completion_tokens")
        return BackendReply(
            text,
            whitespace_tokens(request.prompt) if pt is None else int(pt),
            whitespace_tokens(text) if ct is None else int(ct),
        )


Responder = Callable[[LlmRequest], str]


class CallableBackend:
    """Wraps a Python function; usage is counted in whitespace tokens."""

    def __init__(self, fn: Responder, backend_id: str = "callable") -> None:
        self.fn = fn
        self.backend_id = backend_id

    def generate(self, request: LlmRequest) -> BackendReply:
        text = self.fn(request)
        return BackendReply(text, whitespace_tokens(request.prompt), whitespace_tokens(text))


class RecordingBackend:
    """Passes calls to ``inner`` and keeps fixture records of every reply."""

    def __init__(self, inner: Backend) -> None:
        self.inner = inner
        self.backend_id = inner.backend_id
        self.records: list[dict] = []
        self._seen: set[tuple[str, str]] = set()
        self._lock = threading.Lock()

    def generate(self, request: LlmRequest) -> BackendReply:
        reply = self.inner.generate(request)
        key = (request.stage.value, prompt_sha256(request.prompt))
        with self._lock:
            if key not in self._seen:
                self._seen.add(key)
                self.records.append({
                    "stage": key[0],
                    "prompt_sha256": key[1],
                    "response_text": reply.text,
                    "prompt_tokens": reply.prompt_tokens,
                    "completion_tokens": reply.completion_tokens,
                })
        return reply

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
