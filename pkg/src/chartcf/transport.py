"""Chat-completions transports: real HTTP, and transcript replay for tests.

The wire format is the OpenAI-compatible ``/chat/completions`` JSON shape;
images travel as base64 data URLs inside the user message content list.
"""

from __future__ import annotations

import base64
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .errors import (
    AuthError,
    ChartCFError,
    ConfigError,
    MalformedReplyError,
    TransientExhaustedError,
)

ENV_API_KEY = "CHARTCF_API_KEY"
ENV_API_BASE = "CHARTCF_API_BASE"

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_JPEG_MAGIC = b"\xff\xd8\xff"


class TransientTransportError(ChartCFError):
    """Timeout or connection drop; retried like a 5xx."""


class MockTransportError(ChartCFError):
    """Transcript directory has no (further) reply for a request tag."""


@dataclass(frozen=True)
class ApiConfig:
    """Connection settings for one chat-completions endpoint."""

    model_id: str
    base_url: str = ""
    api_key_env: str = ENV_API_KEY
    max_retries: int = 3
    timeout_s: float = 120.0
    requests_per_minute: float = 0.0  # 0 disables rate limiting
    backoff_base_s: float = 1.0

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if not self.timeout_s > 0:
            raise ConfigError(f"timeout must be > 0, got {self.timeout_s}")

    def resolve_base_url(self) -> str:
        base = self.base_url or os.environ.get(ENV_API_BASE, "")
        if not base:
            raise ConfigError(f"no API base URL configured (flag or ${ENV_API_BASE})")
        return base.rstrip("/")

    def resolve_api_key(self) -> str:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise ConfigError(f"${self.api_key_env} is not set")
        return key


@dataclass(frozen=True)
class TransportReply:
    status_code: int
    body: dict


def image_data_url(image: bytes) -> str:
    """Encode PNG/JPEG bytes as a data URL; rejects other formats."""
    if image.startswith(_PNG_MAGIC):
        mime = "image/png"
    elif image.startswith(_JPEG_MAGIC):
        mime = "image/jpeg"
    else:
        raise ConfigError("image bytes are neither PNG nor JPEG")
    return f"data:{mime};base64,{base64.b64encode(image).decode('ascii')}"


def image_part(image: bytes) -> dict:
    return {"type": "image_url", "image_url": {"url": image_data_url(image)}}


def text_part(text: str) -> dict:
    return {"type": "text", "text": text}


class RateLimiter:
    """Serializes request starts to at most `per_minute` per minute."""

    def __init__(self, per_minute: float):
        self.interval = 60.0 / per_minute if per_minute > 0 else 0.0
        self._lock = threading.Lock()
        self._next_at = 0.0

    def acquire(self) -> None:
        if self.interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            wait = self._next_at - now
            self._next_at = max(now, self._next_at) + self.interval
        if wait > 0:
            time.sleep(wait)


class HttpTransport:
    """Posts to `{base_url}/chat/completions` with bearer auth."""

    def __init__(self, cfg: ApiConfig):
        self.url = cfg.resolve_base_url() + "/chat/completions"
        self.api_key = cfg.resolve_api_key()
        self.timeout_s = cfg.timeout_s
        self._session = requests.Session()

    def send(self, payload: dict, tag: str) -> TransportReply:
        try:
            resp = self._session.post(
                self.url,
                json=payload,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout_s,
            )
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise TransientTransportError(f"{tag}: {exc}") from exc
        try:
            body = resp.json()
        except ValueError:
            body = {}
        return TransportReply(resp.status_code, body)


class MockTransport:
    """Replays canned replies from a transcript directory.

    One file per request tag: tag ``000001/modify`` maps to
    ``000001.modify.json`` holding ``{"replies": [...]}``.  Replies are
    consumed in order per tag, so retries and re-asks see successive
    entries regardless of scheduling across threads.  Reply entries:

      {"status": 200, "text": "..."}   assistant message with that text
      {"status": 429}                  bare HTTP status, empty body
      {"error": "timeout"}             simulated transport timeout
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise ConfigError(f"mock transcript directory not found: {directory}")
        self._lock = threading.Lock()
        self._cursors: dict[str, int] = {}
        self.calls: list[str] = []  # tags in arrival order, for assertions

    def send(self, payload: dict, tag: str) -> TransportReply:
        path = self.directory / (tag.replace("/", ".") + ".json")
        with self._lock:
            index = self._cursors.get(tag, 0)
            self._cursors[tag] = index + 1
            self.calls.append(tag)
        if not path.exists():
            raise MockTransportError(f"no transcript for tag {tag!r} at {path}")
        replies = json.loads(path.read_text())["replies"]
        if index >= len(replies):
            raise MockTransportError(f"transcript for {tag!r} exhausted at call {index + 1}")
        entry = replies[index]
        if entry.get("error") == "timeout":
            raise TransientTransportError(f"{tag}: scripted timeout")
        status = int(entry.get("status", 200))
        if status != 200:
            return TransportReply(status, {})
        body = {
            "model": "mock",
            "choices": [{"message": {"role": "assistant", "content": entry["text"]}}],
        }
        if "usage" in entry:
            body["usage"] = entry["usage"]
        return TransportReply(200, body)


@dataclass
class ChatReply:
    text: str
    usage: dict | None = None


@dataclass
class ChatClient:
    """Retrying chat-completions caller shared by the modifier and the judge.

    Immutable after construction apart from the rate limiter, which
    serializes token acquisition internally; safe to share across workers.
    """

    cfg: ApiConfig
    transport: HttpTransport | MockTransport
    limiter: RateLimiter = field(init=False)

    def __post_init__(self) -> None:
        self.limiter = RateLimiter(self.cfg.requests_per_minute)

    def complete(self, content_parts: list[dict], tag: str) -> ChatReply:
        """One logical call; transparently retries 429/5xx/timeouts."""
        payload = {
            "model": self.cfg.model_id,
            "messages": [{"role": "user", "content": content_parts}],
        }
        attempts = self.cfg.max_retries + 1
        last_reason = "no attempt made"
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.cfg.backoff_base_s * 2 ** (attempt - 1))
            self.limiter.acquire()
            try:
                reply = self.transport.send(payload, tag)
            except TransientTransportError as exc:
                last_reason = str(exc)
                continue
            if reply.status_code in (401, 403):
                raise AuthError(f"{tag}: HTTP {reply.status_code}")
            if reply.status_code == 429 or reply.status_code >= 500:
                last_reason = f"HTTP {reply.status_code}"
                continue
            if reply.status_code != 200:
                raise MalformedReplyError(f"{tag}: unexpected HTTP {reply.status_code}")
            return _extract_reply(reply.body, tag)
        raise TransientExhaustedError(
            f"{tag}: gave up after {attempts} attempts ({last_reason})"
        )


def _extract_reply(body: dict, tag: str) -> ChatReply:
    try:
        text = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise MalformedReplyError(f"{tag}: reply carries no assistant text") from None
    if not isinstance(text, str) or not text:
        raise MalformedReplyError(f"{tag}: reply carries no assistant text")
    return ChatReply(text=text, usage=body.get("usage"))
