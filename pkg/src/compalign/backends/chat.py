"""Prompt decomposition through an OpenAI-compatible chat-completion endpoint."""

from __future__ import annotations

import os

import httpx

from ..errors import BackendError, ConfigError
from ..questions import GeneratorBackend

BASE_URL_ENV = "COMPALIGN_LLM_BASE_URL"
API_KEY_ENV = "COMPALIGN_LLM_API_KEY"
MODEL_ENV = "COMPALIGN_LLM_MODEL"
DEFAULT_BASE_URL = "https://api.openai.com/v1"


class ChatCompletionGenerator(GeneratorBackend):
    """POSTs ``{base_url}/chat/completions`` with the request as a single user message.

    Temperature defaults to 0 and a fixed seed is sent so that servers which
    honour it return reproducible decompositions.
    """

    backend_id = "chat-completions"

    def __init__(
        self,
        model: str | None = None,
        base_url: str | None = None,
        api_key: str | None = None,
        temperature: float = 0.0,
        seed: int | None = 0,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.model = model or os.environ.get(MODEL_ENV) or "gpt-4"
        self.model_version = self.model
        self.base_url = (base_url or os.environ.get(BASE_URL_ENV) or DEFAULT_BASE_URL).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        if not self.api_key and transport is None:
            raise ConfigError(f"set {API_KEY_ENV} to use the chat-completions generator")
        self.temperature = temperature
        self.seed = seed
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def payload(self, request: str) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": request}],
            "temperature": self.temperature,
        }
        if self.seed is not None:
            body["seed"] = self.seed
        return body

    def complete(self, request: str) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self._client.post(f"{self.base_url}/chat/completions", json=self.payload(request), headers=headers)
            resp.raise_for_status()
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except (httpx.HTTPError, ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"chat-completions request failed: {exc}") from exc
