"""Closed-loop episode state machine: generate, stop, parse, execute, re-inject.

One episode = one query image + question driven to a final answer. The
model backend is pluggable; two are bundled: a scripted backend that plays
a fixed span list (the test oracle) and an HTTP chat-completions client.

The rendered-history format is frozen: messages joined by a single newline,
each prefixed with "<|role|>". Tool results always arrive wrapped in
<output></output>; successful augmentations render as the "<image>"
placeholder with the actual pixels travelling out-of-band as attachments.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Protocol, Sequence

import httpx

from .errors import BackendUnavailable, ConfigInvalid, ImageUndecodable
from .image import ImageBuffer
from .ops import (
    OP_KINDS,
    DEFAULT_MAX_PIXELS,
    AugmentationOp,
    apply_op,
)
from .parsing import (
    ANSWER_CLOSE,
    CODE_CLOSE,
    DEFAULT_STOP_SET,
    OUTPUT_CLOSE,
    OUTPUT_OPEN,
    ParseError,
    extract_call,
    find_stop,
    scan_tags,
)

TRACE_SCHEMA_VERSION = "episode/v1"
FORCED_FINAL_MESSAGE = "OK, I have to give the final answer directly"
IMAGE_PLACEHOLDER = "<image>"

# Rough context accounting: four characters per text token plus a fixed
# per-image cost of one token per 28x28 pixel patch. The real tokenizer is
# the backend's concern; this only guards the loop's budget.
CHARS_PER_TOKEN = 4
PIXELS_PER_IMAGE_TOKEN = 28 * 28


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 1.0
    top_p: float = 0.9
    top_k: int = 50
    seed: Optional[int] = None


@dataclass(frozen=True)
class GeneratedSpan:
    text: str
    finish_reason: str = "stop"
    logprobs: Optional[tuple] = None


@dataclass(frozen=True)
class ImageAttachment:
    image: ImageBuffer
    generation: int  # 0 = the original query image


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant | tool_output
    text: str
    attachments: tuple = ()


@dataclass(frozen=True)
class Query:
    image: ImageBuffer
    question: str
    system_prompt: Optional[str] = None


@dataclass(frozen=True)
class EpisodeConfig:
    max_calls: int = 8
    grace_calls: int = 2
    max_completion_tokens: int = 3196
    max_context_tokens: int = 10240
    sampling: SamplingParams = SamplingParams()
    allowed_ops: tuple = OP_KINDS
    max_pixels: int = DEFAULT_MAX_PIXELS
    stop_set: tuple = DEFAULT_STOP_SET
    token_estimator: Optional[Callable[[Sequence[Message]], int]] = None

    def __post_init__(self):
        if self.max_calls < 1:
            raise ConfigInvalid("max_calls must be >= 1")
        if not (0 <= self.grace_calls < self.max_calls):
            raise ConfigInvalid("grace_calls must satisfy 0 <= grace_calls < max_calls")
        if self.max_completion_tokens <= 0 or self.max_context_tokens <= 0:
            raise ConfigInvalid("token limits must be positive")


@dataclass(frozen=True)
class CallRecord:
    raw: str
    status: str  # ok | parse_error | exec_error | not_executed
    op: Optional[AugmentationOp] = None
    error_code: Optional[str] = None
    error_message: Optional[str] = None
    assignment_target: Optional[str] = None
    source_generation: int = 0

    @property
    def valid(self) -> bool:
        """True when name and parameters were accepted (executed or not)."""
        return self.status == "ok" or (self.status == "not_executed" and self.op is not None)


@dataclass(frozen=True)
class EpisodeTrace:
    history: tuple  # of Message
    calls: tuple  # of CallRecord
    final_answer: str
    k: int
    terminated_by: str  # answer | forced | context_exhausted
    question: str = ""


class ModelBackend(Protocol):
    def generate(self, history: Sequence[Message], stop_set: Sequence[str],
                 sampling: SamplingParams) -> GeneratedSpan: ...


def render_message(message: Message) -> str:
    return f"<|{message.role}|>{message.text}"


def render_history(history: Sequence[Message]) -> str:
    return "\n".join(render_message(m) for m in history)


def estimate_tokens(history: Sequence[Message]) -> int:
    text_tokens = math.ceil(len(render_history(history)) / CHARS_PER_TOKEN)
    image_tokens = sum(
        math.ceil(att.image.pixel_count / PIXELS_PER_IMAGE_TOKEN)
        for m in history for att in m.attachments
    )
    return text_tokens + image_tokens


class ScriptedBackend:
    """Plays back a fixed list of spans, honoring the active stop set.

    Each scripted span is truncated at the earliest stop string (kept as a
    terminal suffix). An exhausted script yields empty spans, which the
    loop treats as a completion without a stop.
    """

    def __init__(self, spans: Sequence[str]):
        self.spans = list(spans)
        self._cursor = 0

    def generate(self, history, stop_set, sampling) -> GeneratedSpan:
        if self._cursor >= len(self.spans):
            return GeneratedSpan("", finish_reason="exhausted")
        text = self.spans[self._cursor]
        self._cursor += 1
        hit = find_stop(text, stop_set)
        if hit is not None:
            return GeneratedSpan(text[:hit.position + len(hit.stop)], finish_reason="stop")
        return GeneratedSpan(text, finish_reason="length")

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        spans = payload["spans"] if isinstance(payload, dict) else payload
        return cls(spans)


class HttpChatBackend:
    """OpenAI-style chat-completions client with inline image attachments.

    Auth comes from the environment (api_key_env), never from code. The
    transport argument exists for tests.
    """

    def __init__(self, endpoint: str, model: str = "default",
                 api_key_env: str = "AUGLOOP_BACKEND_API_KEY",
                 timeout: float = 120.0, transport=None):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = os.environ.get(api_key_env, "")
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def build_payload(self, history: Sequence[Message], stop_set, sampling: SamplingParams) -> dict:
        messages = []
        for m in history:
            role = {"tool_output": "user", "system": "system",
                    "user": "user", "assistant": "assistant"}[m.role]
            if m.attachments:
                content = [{"type": "text", "text": m.text}]
                for att in m.attachments:
                    content.append({
                        "type": "image_url",
                        "image_url": {"url": "data:image/png;base64," + att.image.to_png_base64()},
                    })
            else:
                content = m.text
            messages.append({"role": role, "content": content})
        payload = {
            "model": self.model,
            "messages": messages,
            "stop": list(stop_set),
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
        }
        if sampling.seed is not None:
            payload["seed"] = sampling.seed
        return payload

    def generate(self, history, stop_set, sampling) -> GeneratedSpan:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(f"{self.endpoint}/chat/completions",
                                     json=self.build_payload(history, stop_set, sampling),
                                     headers=headers)
            resp.raise_for_status()
            body = resp.json()
            choice = body["choices"][0]
            text = choice["message"]["content"] or ""
            finish = choice.get("finish_reason", "stop")
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise BackendUnavailable(f"chat backend failed: {exc}") from exc
        # Providers strip the stop string; restore it so the loop can parse.
        if finish == "stop" and find_stop(text, stop_set) is None:
            for stop in stop_set:
                open_tag = stop.replace("</", "<")
                if open_tag in text:
                    text += stop
                    break
        return GeneratedSpan(text, finish_reason=finish)


def _last_code_content(span_text: str, stop_position: int) -> str:
    open_pos = span_text.rfind("<code>", 0, stop_position)
    if open_pos < 0:
        return span_text[:stop_position]
    return span_text[open_pos + len("<code>"):stop_position]


def run_episode(backend: ModelBackend, query: Query, config: EpisodeConfig = EpisodeConfig()) -> EpisodeTrace:
    """Drive one episode to completion. Deterministic for deterministic backends."""
    if not isinstance(query.image, ImageBuffer):
        raise ImageUndecodable("query image is not a decodable ImageBuffer")
    estimator = config.token_estimator or estimate_tokens

    history: list[Message] = []
    if query.system_prompt:
        history.append(Message("system", query.system_prompt))
    history.append(Message("user", query.question,
                           attachments=(ImageAttachment(query.image, 0),)))

    current = query.image
    calls: list[CallRecord] = []
    k = 0
    generation = 0
    terminated_by: Optional[str] = None
    final_answer = ""
    forced = False

    def generate(stops):
        try:
            return backend.generate(tuple(history), stops, config.sampling)
        except BackendUnavailable:
            raise
        except Exception as exc:  # transport and programming failures alike
            raise BackendUnavailable(f"backend generate failed: {exc}") from exc

    def force(reason: str):
        nonlocal forced, terminated_by
        forced = True
        if terminated_by is None:
            terminated_by = reason
        history.append(Message("user", FORCED_FINAL_MESSAGE))

    while True:
        if not forced and estimator(history) + config.max_completion_tokens > config.max_context_tokens:
            force("context_exhausted")
        active_stops = (ANSWER_CLOSE,) if forced else config.stop_set
        span = generate(active_stops)
        history.append(Message("assistant", span.text))
        hit = find_stop(span.text, active_stops)

        if hit is None:
            if forced:
                break  # forced generation produced no answer tag
            force("forced")
            continue

        if hit.stop == ANSWER_CLOSE:
            final_answer = scan_tags(span.text).answer_text
            if terminated_by is None:
                terminated_by = "answer"
            break

        # code stop
        k += 1
        raw = _last_code_content(span.text, hit.position)
        parsed = extract_call(raw, allowed_kinds=config.allowed_ops)

        if k > config.max_calls:
            if isinstance(parsed, ParseError):
                record = CallRecord(raw, "parse_error", error_code=parsed.code,
                                    error_message=parsed.message)
            else:
                record = CallRecord(raw, "not_executed", op=parsed.op,
                                    assignment_target=parsed.assignment_target)
            calls.append(record)
            force("forced")
            continue

        if isinstance(parsed, ParseError):
            calls.append(CallRecord(raw, "parse_error", error_code=parsed.code,
                                    error_message=parsed.message))
            history.append(Message("tool_output",
                                   f"{OUTPUT_OPEN}{parsed.message}{OUTPUT_CLOSE}"))
            continue

        outcome = apply_op(current, parsed.op, query.image,
                           max_pixels=config.max_pixels, source_generation=generation)
        if outcome.ok:
            generation += 1
            current = outcome.image
            calls.append(CallRecord(raw, "ok", op=parsed.op,
                                    assignment_target=parsed.assignment_target,
                                    source_generation=generation))
            history.append(Message("tool_output",
                                   f"{OUTPUT_OPEN}{IMAGE_PLACEHOLDER}{OUTPUT_CLOSE}",
                                   attachments=(ImageAttachment(outcome.image, generation),)))
        else:
            calls.append(CallRecord(raw, "exec_error", op=parsed.op,
                                    assignment_target=parsed.assignment_target,
                                    error_code=outcome.error.code,
                                    error_message=outcome.error.human_text))
            history.append(Message("tool_output",
                                   f"{OUTPUT_OPEN}{outcome.error.human_text}{OUTPUT_CLOSE}"))

    return EpisodeTrace(
        history=tuple(history),
        calls=tuple(calls),
        final_answer=final_answer,
        k=k,
        terminated_by=terminated_by or "answer",
        question=query.question,
    )


# ---------------------------------------------------------------------------
# Episode record serialization (the interchange format for rewards, training
# signal assembly, and the evaluation harness). One JSON object per episode;
# files hold one record per line.
# ---------------------------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def trace_to_dict(trace: EpisodeTrace, include_images: bool = True,
                  rewards: Optional[dict] = None) -> dict:
    messages = []
    for m in trace.history:
        attachments = []
        for att in m.attachments:
            entry = {"generation": att.generation, "sha256": att.image.sha256()}
            if include_images:
                entry["png_b64"] = att.image.to_png_base64()
            attachments.append(entry)
        messages.append({"role": m.role, "text": m.text, "attachments": attachments})
    call_records = []
    for c in trace.calls:
        call_records.append({
            "raw": c.raw,
            "status": c.status,
            "op": {"kind": c.op.kind, "params": c.op.params} if c.op else None,
            "error": ({"code": c.error_code, "message": c.error_message}
                      if c.error_code else None),
            "assignment_target": c.assignment_target,
            "source_generation": c.source_generation,
        })
    return {
        "schema_version": TRACE_SCHEMA_VERSION,
        "question": trace.question,
        "messages": messages,
        "calls": call_records,
        "k": trace.k,
        "terminated_by": trace.terminated_by,
        "final_answer": trace.final_answer,
        "rewards": rewards,
    }


def trace_from_dict(record: dict) -> EpisodeTrace:
    if record.get("schema_version") != TRACE_SCHEMA_VERSION:
        raise ValueError(f"unsupported trace schema: {record.get('schema_version')!r}")
    messages = []
    for m in record["messages"]:
        attachments = []
        for att in m.get("attachments", []):
            if "png_b64" in att:
                attachments.append(ImageAttachment(
                    ImageBuffer.from_png_base64(att["png_b64"]), att["generation"]))
        messages.append(Message(m["role"], m["text"], attachments=tuple(attachments)))
    calls = []
    for c in record["calls"]:
        op = AugmentationOp(c["op"]["kind"], dict(c["op"]["params"])) if c.get("op") else None
        err = c.get("error") or {}
        calls.append(CallRecord(
            raw=c["raw"], status=c["status"], op=op,
            error_code=err.get("code"), error_message=err.get("message"),
            assignment_target=c.get("assignment_target"),
            source_generation=c.get("source_generation", 0),
        ))
    return EpisodeTrace(
        history=tuple(messages),
        calls=tuple(calls),
        final_answer=record["final_answer"],
        k=record["k"],
        terminated_by=record["terminated_by"],
        question=record.get("question", ""),
    )


def write_trace_records(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(canonical_json(rec) + "\n")


def read_trace_records(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
