"""Chat-completion client, constrained binary decoding, and the mock model.

The HTTP path speaks the standard chat-completions wire protocol with
bearer auth, bounded retries on transport errors and 429/5xx, and an
optional logit-bias map that pins the reply to the single characters
"0"/"1". The mock endpoint applies a threshold rule to the target row it
parses back out of the prompt, giving a deterministic oracle for
end-to-end tests.
"""

from __future__ import annotations

import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import httpx

from .errors import (
    AuthFailure,
    FeatureNotFound,
    MalformedResponse,
    RateLimited,
    RequestFailed,
    Transport,
    Undecodable,
)
from .prompts import MISSING_TOKEN, RenderedPrompt, grid_lines, target_section

DEFAULT_LOGIT_BIAS_STRENGTH = 100
DEFAULT_CONCURRENCY = 4


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    auth_env: str = ""  # name of the env var holding the bearer token
    max_output_tokens: int = 16
    temperature: float = 0.0
    supports_logit_bias: bool = False
    zero_token_id: int | None = None  # tokenizer-specific ids, supplied per endpoint
    one_token_id: int | None = None
    logit_bias_strength: int = DEFAULT_LOGIT_BIAS_STRENGTH
    timeout: float = 30.0
    max_attempts: int = 3
    backoff_base: float = 0.5

    def __post_init__(self) -> None:
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def describe(self) -> str:
        return f"http:{self.model_name}"


@dataclass(frozen=True)
class RawResponse:
    text: str
    finish_reason: str | None = None
    latency_s: float = 0.0
    usage: dict | None = None


def build_request_body(
    endpoint: EndpointConfig, prompt: RenderedPrompt, constrain_binary: bool = False
) -> dict:
    """Deterministic request body; also what gets persisted for audit."""
    body: dict = {
        "model": endpoint.model_name,
        "messages": [{"role": m.role, "content": m.content} for m in prompt.messages],
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_output_tokens,
    }
    if (
        constrain_binary
        and endpoint.supports_logit_bias
        and endpoint.zero_token_id is not None
        and endpoint.one_token_id is not None
    ):
        body["max_tokens"] = 1
        body["logit_bias"] = {
            str(endpoint.zero_token_id): endpoint.logit_bias_strength,
            str(endpoint.one_token_id): endpoint.logit_bias_strength,
        }
    return body


def encode_request_body(body: dict) -> bytes:
    return json.dumps(body, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def _auth_headers(endpoint: EndpointConfig) -> dict:
    headers = {"Content-Type": "application/json"}
    if endpoint.auth_env:
        token = os.environ.get(endpoint.auth_env)
        if not token:
            raise AuthFailure(f"environment variable {endpoint.auth_env!r} is not set")
        headers["Authorization"] = f"Bearer {token}"
    return headers


def complete(
    endpoint: EndpointConfig,
    prompt: RenderedPrompt,
    constrain_binary: bool = False,
    client: httpx.Client | None = None,
) -> RawResponse:
    """Issue one chat completion with bounded retries.

    Retries transport errors, 429, and 5xx with exponential backoff; other
    4xx fail immediately (401/403 as AuthFailure).
    """
    if not prompt.messages:
        raise RequestFailed("prompt has no messages")
    body = encode_request_body(build_request_body(endpoint, prompt, constrain_binary))
    headers = _auth_headers(endpoint)
    url = endpoint.base_url.rstrip("/") + "/chat/completions"
    owns_client = client is None
    http = client or httpx.Client(timeout=endpoint.timeout)
    started = time.monotonic()
    try:
        last_error: Exception | None = None
        for attempt in range(1, endpoint.max_attempts + 1):
            try:
                response = http.post(url, content=body, headers=headers)
            except httpx.HTTPError as exc:
                last_error = Transport(f"transport error on attempt {attempt}: {exc}")
            else:
                if response.status_code == 200:
                    return _parse_response(response, time.monotonic() - started)
                if response.status_code in (401, 403):
                    raise AuthFailure(f"endpoint returned {response.status_code}")
                if response.status_code == 429:
                    last_error = RateLimited("rate limited (429)")
                elif response.status_code >= 500:
                    last_error = Transport(f"server error {response.status_code}")
                else:
                    raise RequestFailed(
                        f"endpoint returned {response.status_code}: {response.text[:200]}"
                    )
            if attempt < endpoint.max_attempts:
                time.sleep(endpoint.backoff_base * (2 ** (attempt - 1)))
        assert last_error is not None
        raise last_error
    finally:
        if owns_client:
            http.close()


def _parse_response(response: httpx.Response, latency: float) -> RawResponse:
    try:
        doc = response.json()
        choice = doc["choices"][0]
        text = choice["message"]["content"]
    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"cannot read choices[0].message.content: {exc}") from None
    if not isinstance(text, str):
        raise MalformedResponse(f"message content is {type(text).__name__}, not str")
    return RawResponse(
        text=text,
        finish_reason=choice.get("finish_reason"),
        latency_s=latency,
        usage=doc.get("usage"),
    )


def complete_many(
    endpoint: EndpointConfig,
    prompts: Sequence[RenderedPrompt],
    constrain_binary: bool = False,
    concurrency: int = DEFAULT_CONCURRENCY,
) -> dict[str, RawResponse | Exception]:
    """Fan out completions with at most `concurrency` requests in flight."""
    results: dict[str, RawResponse | Exception] = {}
    with httpx.Client(timeout=endpoint.timeout) as client:
        with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
            futures = {
                pool.submit(complete, endpoint, p, constrain_binary, client): p.target_id
                for p in prompts
            }
            for future, target_id in futures.items():
                try:
                    results[target_id] = future.result()
                except Exception as exc:  # recorded per-target, not raised
                    results[target_id] = exc
    return results


# --- constrained decoding ---------------------------------------------------

# a 0/1 digit that is not part of an identifier, a larger number, a decimal
# like 0.82, or a signed value like -1 ("1." at a sentence end still counts)
_STANDALONE_DIGIT = re.compile(r"(?<![0-9A-Za-z_.+\-])([01])(?![0-9A-Za-z_]|\.[0-9])")
_WORD_RULES = (
    (re.compile(r"\bcognitively\s+normal\b", re.IGNORECASE), 0),
    (re.compile(r"\bCN\b", re.IGNORECASE), 0),
    (re.compile(r"\balzheimer", re.IGNORECASE), 1),
    (re.compile(r"\bAD\b", re.IGNORECASE), 1),
)


def constrained_binary_decode(raw: RawResponse | str) -> int:
    """Map model text onto {0,1}.

    Rule order: (1) the trimmed text is exactly "0"/"1"; (2) the first
    standalone 0/1 digit; (3) the earliest case-insensitive CN / cognitively
    normal / AD / Alzheimer mention; (4) Undecodable.
    """
    text = raw.text if isinstance(raw, RawResponse) else raw
    trimmed = text.strip()
    if trimmed in ("0", "1"):
        return int(trimmed)
    digit = _STANDALONE_DIGIT.search(text)
    if digit:
        return int(digit.group(1))
    best: tuple[int, int] | None = None  # (position, label)
    for pattern, label in _WORD_RULES:
        match = pattern.search(text)
        if match and (best is None or match.start() < best[0]):
            best = (match.start(), label)
    if best is not None:
        return best[1]
    raise Undecodable(f"no binary label in {text[:120]!r}")


# --- mock oracle -------------------------------------------------------------

@dataclass(frozen=True)
class MockRule:
    feature: str
    threshold: float
    direction: str = "greater_is_positive"  # or "less_is_positive"

    def __post_init__(self) -> None:
        if self.direction not in ("greater_is_positive", "less_is_positive"):
            raise ValueError(f"unknown direction {self.direction!r}")

    def evaluate(self, value: float | None) -> int:
        """Missing values predict 0 by convention; comparisons are strict."""
        if value is None:
            return 0
        if self.direction == "greater_is_positive":
            return int(value > self.threshold)
        return int(value < self.threshold)


def _target_value_from_grid(text: str, feature: str) -> str | None:
    lines = grid_lines(text)
    if len(lines) < 2:
        return None
    header = [c.strip() for c in lines[0].strip("|").split("|")]
    if feature not in header:
        raise FeatureNotFound(f"{feature!r} not in prompt header {header}")
    idx = header.index(feature)
    cells = [c.strip() for c in lines[-1].strip("|").split("|")]
    if idx >= len(cells):
        raise FeatureNotFound(f"target row too short for column {feature!r}")
    return cells[idx]


def _target_value_from_pairs(text: str, feature: str) -> str | None:
    section = target_section(text)
    if section is None:
        return None
    match = re.search(rf"(?<![\w]){re.escape(feature)}=([^,\n]+)", section)
    if not match:
        raise FeatureNotFound(f"{feature!r} not in target description")
    return match.group(1).strip()


def mock_oracle_predict(prompt: RenderedPrompt, rule: MockRule) -> RawResponse:
    """Deterministic threshold model reading the TARGET row of the prompt.

    Supports tabular grids and keyvalue serializations; the value is compared
    strictly against the rule threshold, with Missing ("NaN") mapping to 0.
    """
    user_text = prompt.user_text()
    value_text = _target_value_from_grid(user_text, rule.feature)
    if value_text is None:
        value_text = _target_value_from_pairs(user_text, rule.feature)
    if value_text is None:
        raise FeatureNotFound(
            f"prompt for {prompt.target_id!r} has neither a grid nor a keyvalue target block"
        )
    value = None if value_text == MISSING_TOKEN else float(value_text)
    return RawResponse(text=str(rule.evaluate(value)), finish_reason="stop")


@dataclass(frozen=True)
class MockEndpoint:
    """In-repo stand-in endpoint; answers interpretable prompts in JSON."""

    rule: MockRule
    reasoning: str = "threshold rule"

    def describe(self) -> str:
        return f"mock:{self.rule.feature}{'>' if self.rule.direction == 'greater_is_positive' else '<'}{self.rule.threshold}"

    def complete(self, prompt: RenderedPrompt, constrain_binary: bool = False) -> RawResponse:
        raw = mock_oracle_predict(prompt, self.rule)
        if prompt.expected_label_position == "assistant_reply_json_prediction":
            answer = json.dumps(
                {"prediction": int(raw.text), "reasoning": self.reasoning, "confidence": 1.0},
                separators=(",", ":"),
            )
            return RawResponse(text=answer, finish_reason="stop")
        return raw
