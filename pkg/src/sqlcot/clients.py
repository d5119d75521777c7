"""Model client boundary for teacher and rationalizer endpoints.

The pipeline never hosts models; it talks to a client object with a single
``complete(request) -> response`` method. Shipped implementations: an HTTP
chat-completions client, a record/replay transcript client for reproducible
integration runs, and a fixed-text stub. The procedural offline mock lives
in :mod:`sqlcot.rationalizer` because it needs corpus and database access.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

logger = logging.getLogger(__name__)


class TeacherError(Exception):
    """Transport-level failure talking to a model endpoint."""


@dataclass
class TeacherRequest:
    prompt: str
    model: str = "teacher"
    temperature: float = 0.0
    seed: int | None = None
    mode: str = "greedy"

    @property
    def prompt_sha256(self) -> str:
        return hashlib.sha256(self.prompt.encode("utf-8")).hexdigest()


@dataclass
class TeacherResponse:
    text: str
    finish_reason: str = "stop"
    usage: dict | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise TeacherError("model returned an empty completion")


class TeacherClient(Protocol):
    def complete(self, request: TeacherRequest) -> TeacherResponse: ...


def call_with_retries(
    client: TeacherClient,
    request: TeacherRequest,
    retries: int = 3,
    backoff: float = 0.5,
    sleep=time.sleep,
) -> TeacherResponse:
    """Retry transport errors with exponential backoff; re-raise the last."""
    attempt = 0
    while True:
        try:
            return client.complete(request)
        except TeacherError as exc:
            attempt += 1
            if attempt > retries:
                raise
            delay = backoff * (2 ** (attempt - 1))
            logger.warning("teacher call failed (%s); retry %d/%d in %.1fs", exc, attempt, retries, delay)
            sleep(delay)


class HttpTeacherClient:
    """Chat-completions style JSON endpoint.

    Credentials come from the environment (``api_key_env``), never from
    config files. When ``transcript_path`` is set, every request/response
    pair is appended there for audit and later replay.
    """

    def __init__(
        self,
        endpoint: str,
        model: str | None = None,
        api_key_env: str = "SQLCOT_TEACHER_API_KEY",
        timeout: float = 120.0,
        transcript_path: str | Path | None = None,
        session=None,
    ):
        if session is None:
            import requests

            session = requests.Session()
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.transcript_path = Path(transcript_path) if transcript_path else None
        self._session = session

    def complete(self, request: TeacherRequest) -> TeacherResponse:
        payload: dict = {
            "model": self.model or request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            http_response = self._session.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout
            )
            http_response.raise_for_status()
            body = http_response.json()
        except Exception as exc:  # transport, HTTP status, or JSON failure
            raise TeacherError(f"teacher endpoint failure: {exc}") from exc
        try:
            choice = body["choices"][0]
            text = choice["message"]["content"]
            finish = choice.get("finish_reason", "stop")
        except (KeyError, IndexError, TypeError) as exc:
            raise TeacherError(f"malformed completion payload: {body!r}") from exc
        response = TeacherResponse(text=text, finish_reason=finish, usage=body.get("usage"))
        self._append_transcript(request, response)
        return response

    def _append_transcript(self, request: TeacherRequest, response: TeacherResponse) -> None:
        if self.transcript_path is None:
            return
        entry = {
            "prompt_sha256": request.prompt_sha256,
            "prompt": request.prompt,
            "model": self.model or request.model,
            "temperature": request.temperature,
            "seed": request.seed,
            "response": response.text,
            "finish_reason": response.finish_reason,
        }
        self.transcript_path.parent.mkdir(parents=True, exist_ok=True)
        with self.transcript_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


class ReplayTeacherClient:
    """Serve completions recorded in a transcript JSONL, keyed by prompt hash."""

    def __init__(self, transcript_path: str | Path):
        self.transcript_path = Path(transcript_path)
        self._responses: dict[str, str] = {}
        if not self.transcript_path.exists():
            raise TeacherError(f"transcript not found: {self.transcript_path}")
        for line in self.transcript_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            key = entry.get("prompt_sha256") or hashlib.sha256(
                entry["prompt"].encode("utf-8")
            ).hexdigest()
            self._responses[key] = entry["response"]

    def complete(self, request: TeacherRequest) -> TeacherResponse:
        text = self._responses.get(request.prompt_sha256)
        if text is None:
            raise TeacherError(
                f"no recorded response for prompt {request.prompt_sha256[:12]}…"
            )
        return TeacherResponse(text=text)


@dataclass
class RecordingTeacherClient:
    """Wrap another client and append its traffic to a transcript file."""

    inner: TeacherClient
    transcript_path: Path

    def complete(self, request: TeacherRequest) -> TeacherResponse:
        response = self.inner.complete(request)
        entry = {
            "prompt_sha256": request.prompt_sha256,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "seed": request.seed,
            "response": response.text,
            "finish_reason": response.finish_reason,
        }
        self.transcript_path.parent.mkdir(parents=True, exist_ok=True)
        with self.transcript_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
        return response


@dataclass
class StaticTeacherClient:
    """Always answer with a fixed text; handy for failure-path tests."""

    text: str
    calls: list[TeacherRequest] = field(default_factory=list)

    def complete(self, request: TeacherRequest) -> TeacherResponse:
        self.calls.append(request)
        return TeacherResponse(text=self.text)


@dataclass
class FlakyTeacherClient:
    """Fail with a transport error ``failures`` times, then delegate."""

    inner: TeacherClient
    failures: int

    def complete(self, request: TeacherRequest) -> TeacherResponse:
        if self.failures > 0:
            self.failures -= 1
            raise TeacherError("simulated transport failure")
        return self.inner.complete(request)
