"""Chat-completions agent over HTTP.

POSTs {base_url}/chat/completions with {"model", "messages", "temperature"}
and reads choices[0].message.content from the reply.

Licensed under the Apache License, Version 2.0
"""

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import httpx

from sasopt.protocol import AgentInterface, AgentTranscript, AgentTransportError, Role

logger = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "SASOPT_API_KEY"
DEFAULT_REQUESTS_PER_MINUTE = 60

_WIRE_ROLES = {Role.SYSTEM: "system", Role.HARNESS: "user", Role.AGENT: "assistant"}


@dataclass(frozen=True)
class AgentEndpointConfig:
    """Where and how to reach a chat-completions endpoint."""

    base_url: str
    model_id: str
    api_key_env_var: str = DEFAULT_API_KEY_ENV
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    requests_per_minute: int = DEFAULT_REQUESTS_PER_MINUTE

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.timeout <= 0:
            raise ValueError(f"timeout must be > 0, got {self.timeout}")
        if self.requests_per_minute < 1:
            raise ValueError(
                f"requests_per_minute must be >= 1, got {self.requests_per_minute}"
            )

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AgentEndpointConfig":
        return cls(
            base_url=str(data["base_url"]),
            model_id=str(data["model_id"]),
            api_key_env_var=str(data.get("api_key_env_var", DEFAULT_API_KEY_ENV)),
            timeout=float(data.get("timeout", 60.0)),
            max_retries=int(data.get("max_retries", 3)),
            temperature=float(data.get("temperature", 0.0)),
            requests_per_minute=int(data.get("requests_per_minute", DEFAULT_REQUESTS_PER_MINUTE)),
        )


class RateLimiter:
    """Token bucket rate limiter with injectable clock for testing.

    Thread-safe; one instance is shared by every HttpAgent in the process.
    """

    def __init__(
        self,
        rpm: int,
        time_func: Optional[Callable[[], float]] = None,
        sleep_func: Optional[Callable[[float], None]] = None,
    ):
        self.interval = 60.0 / rpm
        self.last_call: Optional[float] = None
        self._time = time_func or time.monotonic
        self._sleep = sleep_func or time.sleep
        self._lock = threading.Lock()

    def wait(self) -> None:
        """Block until rate limit allows next call."""
        with self._lock:
            if self.last_call is not None:
                elapsed = self._time() - self.last_call
                if elapsed < self.interval:
                    self._sleep(self.interval - elapsed)
            self.last_call = self._time()


_shared_limiters: Dict[int, RateLimiter] = {}
_shared_lock = threading.Lock()


def shared_rate_limiter(rpm: int) -> RateLimiter:
    """Process-wide limiter for a given requests-per-minute ceiling."""
    with _shared_lock:
        if rpm not in _shared_limiters:
            _shared_limiters[rpm] = RateLimiter(rpm)
        return _shared_limiters[rpm]


def to_wire_messages(transcript: AgentTranscript) -> List[Dict[str, str]]:
    return [{"role": _WIRE_ROLES[m.role], "content": m.text} for m in transcript.messages]


class HttpAgent(AgentInterface):
    """Agent backed by an OpenAI-compatible chat-completions endpoint."""

    name = "http"

    def __init__(
        self,
        config: AgentEndpointConfig,
        client: Optional[httpx.Client] = None,
        rate_limiter: Optional[RateLimiter] = None,
    ):
        self.config = config
        self.max_retries = config.max_retries
        self._client = client or httpx.Client(timeout=config.timeout)
        self._limiter = rate_limiter or shared_rate_limiter(config.requests_per_minute)

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env_var)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        else:
            logger.debug(f"{self.config.api_key_env_var} not set; sending without auth")
        return headers

    def request_body(self, transcript: AgentTranscript) -> Dict[str, Any]:
        return {
            "model": self.config.model_id,
            "messages": to_wire_messages(transcript),
            "temperature": self.config.temperature,
        }

    def send(self, transcript: AgentTranscript) -> str:
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        self._limiter.wait()
        try:
            response = self._client.post(
                url,
                json=self.request_body(transcript),
                headers=self._headers(),
                timeout=self.config.timeout,
            )
        except httpx.TimeoutException as e:
            raise AgentTransportError(f"timeout calling {url}: {e}") from e
        except httpx.HTTPError as e:
            raise AgentTransportError(f"connection error calling {url}: {e}") from e

        if response.status_code >= 400:
            retryable = response.status_code == 429 or response.status_code >= 500
            raise AgentTransportError(
                f"HTTP {response.status_code} from {url}: {response.text[:200]}",
                retryable=retryable,
            )
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise AgentTransportError(f"malformed reply from {url}: {e}", retryable=False) from e
        if not isinstance(content, str) or not content:
            raise AgentTransportError(f"empty reply from {url}", retryable=False)
        return content

    def close(self) -> None:
        self._client.close()
