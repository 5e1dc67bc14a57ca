"""Chat-completions HTTP client with retry, plus the text-generation backend contract."""

from __future__ import annotations

import logging
import os
import time
from typing import Any, Optional, Protocol

import httpx

log = logging.getLogger(__name__)

ENV_URL = "TRIAGE_BACKEND_URL"
ENV_TOKEN = "TRIAGE_BACKEND_TOKEN"
RETRY_STATUS = frozenset({408, 409, 429, 500, 502, 503, 504})


class BackendError(RuntimeError):
    """A backend could not produce a response (transport, HTTP status or payload shape)."""

    def __init__(self, message: str, segment_index: Optional[int] = None):
        super().__init__(message)
        self.segment_index = segment_index


class TextGenBackend(Protocol):
    def generate(self, prompt: str) -> str: ...


class ChatCompletionsClient:
    """Minimal client for an OpenAI-style ``/chat/completions`` endpoint.

    The bearer token is read from ``TRIAGE_BACKEND_TOKEN``; it is never taken
    from config files.
    """

    def __init__(
        self,
        base_url: Optional[str] = None,
        model: str = "default",
        *,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_s: float = 0.5,
        temperature: float = 0.0,
        extra_body: Optional[dict[str, Any]] = None,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        base_url = (base_url or os.getenv(ENV_URL, "")).strip()
        if not base_url:
            raise BackendError(f"no backend URL configured (set {ENV_URL})")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.temperature = temperature
        self.extra_body = dict(extra_body or {})
        headers = {"Content-Type": "application/json"}
        token = os.getenv(ENV_TOKEN, "").strip()
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._client.close()

    def chat(self, messages: list[dict[str, Any]]) -> str:
        body = {"model": self.model, "messages": messages, "temperature": self.temperature}
        body.update(self.extra_body)
        url = f"{self.base_url}/chat/completions"
        last_error = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                resp = self._client.post(url, json=body)
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
                log.warning("chat attempt %d failed: %s", attempt + 1, last_error)
                continue
            if resp.status_code in RETRY_STATUS:
                last_error = f"HTTP {resp.status_code}"
                log.warning("chat attempt %d failed: %s", attempt + 1, last_error)
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise BackendError("response lacks choices[0].message.content") from None
            if not isinstance(content, str):
                raise BackendError("message content is not a string")
            return content
        raise BackendError(f"gave up after {self.max_retries + 1} attempts: {last_error}")


class HttpTextGenBackend:
    """TextGenBackend over a chat-completions endpoint."""

    def __init__(self, client: ChatCompletionsClient, system_prompt: Optional[str] = None):
        self.client = client
        self.system_prompt = system_prompt

    def generate(self, prompt: str) -> str:
        messages = []
        if self.system_prompt:
            messages.append({"role": "system", "content": self.system_prompt})
        messages.append({"role": "user", "content": prompt})
        return self.client.chat(messages)
