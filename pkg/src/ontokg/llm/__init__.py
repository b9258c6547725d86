from .backends import (
    BackendReply,
    CallableBackend,
    HttpChatBackend,
    LlmRequest,
    RecordingBackend,
    ScriptedBackend,
    prompt_sha256,
    whitespace_tokens,
)
from .gateway import Gateway, LlmExchange, LlmUsage, UsageReport, extract_json
from .prompts import NO_MATCH, NOT_FINAL, StageKind

__all__ = [
    "BackendReply", "CallableBackend", "Gateway", "HttpChatBackend", "LlmExchange",
    "LlmRequest", "LlmUsage", "NO_MATCH", "NOT_FINAL", "RecordingBackend",
    "ScriptedBackend", "StageKind", "UsageReport", "extract_json", "prompt_sha256",
    "whitespace_tokens",
]
