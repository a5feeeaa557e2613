"""
Model Backends
One prediction interface over an OpenAI-compatible chat-completions client and
deterministic mock oracles
"""

import base64
import hashlib
import json
import os
import threading
import time
import zlib
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import requests
from loguru import logger
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential_jitter

from config_manager import MOCK_KINDS
from core_model import PixelPoint
from errors import (BackendAuthError, BackendTransportError, ConfigurationError,
                    InvalidArgumentError, TransientBackendError)
from prompt_kit import extract_decision

ROLES = ('system', 'user', 'assistant')


@dataclass(frozen=True)
class ChatTurn:
    """One message of the dialogue; image is PNG bytes"""

    role: str
    text: str
    image: Optional[bytes] = field(default=None, repr=False)


def validate_history(history: Sequence[ChatTurn]):
    """
    Check the dialogue shape every backend relies on

    Raises:
        InvalidArgumentError: system turn missing, repeated or not first; image on a non-user turn
    """
    if not history or history[0].role != 'system':
        raise InvalidArgumentError("History must start with the system turn")
    for turn in history:
        if turn.role not in ROLES:
            raise InvalidArgumentError(f"Unknown role: {turn.role!r}")
        if turn.image is not None and turn.role != 'user':
            raise InvalidArgumentError(f"Images are only allowed on user turns, found one on {turn.role}")
    if sum(1 for turn in history if turn.role == 'system') != 1:
        raise InvalidArgumentError("History must hold exactly one system turn")


def user_turn_count(history: Sequence[ChatTurn]) -> int:
    return sum(1 for turn in history if turn.role == 'user')


def request_digest(history: Sequence[ChatTurn], model: Optional[str] = None) -> str:
    """sha256 over roles, texts and image hashes; never includes credentials"""
    canonical = {
        'model': model,
        'messages': [
            {
                'role': turn.role,
                'text': turn.text,
                'image': hashlib.sha256(turn.image).hexdigest() if turn.image is not None else None,
            }
            for turn in history
        ],
    }
    return hashlib.sha256(json.dumps(canonical, sort_keys=True).encode('utf-8')).hexdigest()


class TokenBucket:
    """Rate limiter shared by every worker thread"""

    def __init__(self, rate: float, capacity: Optional[float] = None):
        """
        Args:
            rate: Tokens added per second
            capacity: Burst size (default max(1, rate))
        """
        if rate <= 0:
            raise InvalidArgumentError(f"Rate must be positive, got {rate}")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._updated = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self):
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._updated) * self.rate)
                self._updated = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            time.sleep(wait)


class Backend(ABC):
    """A vision-language model behind one call"""

    @abstractmethod
    def complete(self, history: Sequence[ChatTurn], request_key: Optional[str] = None) -> str:
        """
        Args:
            history: Ordered dialogue, system turn first
            request_key: Sample id the request belongs to

        Returns:
            The model's raw text
        """

    @property
    @abstractmethod
    def identity(self) -> Dict[str, Any]:
        """Backend description safe to write into manifests"""

    @property
    def model(self) -> Optional[str]:
        return self.identity.get('model')


class OpenAICompatibleBackend(Backend):
    """Chat-completions client with base64 PNG image parts"""

    def __init__(self, backend_config: Dict[str, Any], limiter: Optional[TokenBucket] = None,
                 session: Optional[requests.Session] = None):
        """
        Args:
            backend_config: The backend configuration section
            limiter: Shared rate limiter (built from requests_per_second when omitted)
            session: HTTP session to reuse
        """
        self.endpoint = (backend_config.get('endpoint') or '').rstrip('/')
        self.model_name = backend_config.get('model')
        if not self.endpoint or not self.model_name:
            raise ConfigurationError("The http backend needs both an endpoint and a model")

        self.api_key_env = backend_config.get('api_key_env', 'GROUNDING_API_KEY')
        self._api_key = os.getenv(self.api_key_env)
        if not self._api_key:
            logger.warning(f"{self.api_key_env} is not set; sending requests without credentials")

        self.request_timeout_s = float(backend_config.get('request_timeout_s', 60))
        self.max_attempts = int(backend_config.get('max_attempts', 4))
        self.backoff_initial_s = float(backend_config.get('backoff_initial_s', 0.5))

        rps = backend_config.get('requests_per_second')
        self.limiter = limiter or (TokenBucket(float(rps)) if rps else None)
        self.session = session or requests.Session()

    @property
    def identity(self) -> Dict[str, Any]:
        return {'kind': 'http', 'endpoint': self.endpoint, 'model': self.model_name}

    def _headers(self) -> Dict[str, str]:
        headers = {'Content-Type': 'application/json'}
        if self._api_key:
            headers['Authorization'] = f"Bearer {self._api_key}"
        return headers

    def build_payload(self, history: Sequence[ChatTurn]) -> Dict[str, Any]:
        """Request body in the chat-completions wire shape"""
        messages = []
        for turn in history:
            if turn.image is None:
                messages.append({'role': turn.role, 'content': turn.text})
                continue
            encoded = base64.b64encode(turn.image).decode('ascii')
            messages.append({
                'role': turn.role,
                'content': [
                    {'type': 'text', 'text': turn.text},
                    {'type': 'image_url', 'image_url': {'url': f"data:image/png;base64,{encoded}"}},
                ],
            })
        return {'model': self.model_name, 'messages': messages}

    def _post_once(self, payload: Dict[str, Any]) -> str:
        if self.limiter:
            self.limiter.acquire()
        try:
            response = self.session.post(
                f"{self.endpoint}/chat/completions",
                json=payload,
                headers=self._headers(),
                timeout=self.request_timeout_s,
            )
        except (requests.ConnectionError, requests.Timeout) as e:
            raise TransientBackendError(f"Request to {self.endpoint} failed: {e}")

        status = response.status_code
        if status in (401, 403):
            raise BackendAuthError(f"Endpoint rejected the credentials (HTTP {status})")
        if status == 429 or status >= 500:
            raise TransientBackendError(f"Endpoint answered HTTP {status}")
        if status >= 400:
            raise BackendTransportError(f"Endpoint answered HTTP {status}: {response.text[:200]}")

        try:
            content = response.json()['choices'][0]['message']['content']
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise BackendTransportError(f"Malformed completion body: {e}")
        if isinstance(content, list):
            content = ''.join(part.get('text', '') for part in content if isinstance(part, dict))
        return content or ''

    def _log_retry(self, retry_state):
        logger.warning(f"Attempt {retry_state.attempt_number}/{self.max_attempts} failed: "
                       f"{retry_state.outcome.exception()}; retrying")

    def complete(self, history: Sequence[ChatTurn], request_key: Optional[str] = None) -> str:
        validate_history(history)
        payload = self.build_payload(history)
        retrying = Retrying(
            stop=stop_after_attempt(self.max_attempts),
            wait=wait_exponential_jitter(initial=self.backoff_initial_s, jitter=self.backoff_initial_s),
            retry=retry_if_exception_type(TransientBackendError),
            before_sleep=self._log_retry,
            reraise=True,
        )
        return retrying(self._post_once, payload)


@dataclass(frozen=True)
class MockOracleConfig:
    kind: str = 'perfect'
    offset: Tuple[float, float] = (0.0, 0.0)
    noise_sigma: Tuple[float, ...] = (20.0, 10.0)
    convergence: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MOCK_KINDS:
            raise ConfigurationError(f"Unknown mock kind {self.kind!r}; expected one of {', '.join(MOCK_KINDS)}")
        if len(self.offset) != 2:
            raise ConfigurationError("Mock offset must be an (x, y) pair")
        if self.kind == 'seeded_noise' and (not self.noise_sigma or any(s < 0 for s in self.noise_sigma)):
            raise ConfigurationError("seeded_noise needs at least one non-negative sigma")
        if self.kind == 'feedback_aware' and not 0 < self.convergence < 1:
            raise ConfigurationError(f"convergence must be in (0, 1), got {self.convergence}")

    @classmethod
    def from_config(cls, mock_config: Dict[str, Any], seed: int) -> 'MockOracleConfig':
        return cls(
            kind=mock_config.get('kind', 'perfect'),
            offset=tuple(float(v) for v in mock_config.get('offset', (0.0, 0.0))),
            noise_sigma=tuple(float(v) for v in mock_config.get('noise_sigma', (20.0, 10.0))),
            convergence=float(mock_config.get('convergence', 0.5)),
            seed=int(seed),
        )

    def sigma_for_turn(self, turn: int) -> float:
        """Per-turn sigma; the last configured value repeats"""
        return self.noise_sigma[min(turn, len(self.noise_sigma)) - 1]


def _format_coordinate(value: float) -> str:
    text = f"{max(value, 0.0):.2f}".rstrip('0').rstrip('.')
    return text or '0'


class MockOracleBackend(Backend):
    """
    Deterministic stand-in for a model, answering from the hidden targets

    Seeded output depends only on (seed, sample id, turn), so worker count and
    processing order do not change it.
    """

    def __init__(self, config: MockOracleConfig, targets: Dict[str, PixelPoint]):
        self.config = config
        self.targets = dict(targets)

    @property
    def identity(self) -> Dict[str, Any]:
        return {'kind': 'mock', 'model': f"mock-{self.config.kind}", 'seed': self.config.seed}

    def _rng(self, request_key: str, turn: int) -> np.random.Generator:
        entropy = [self.config.seed, zlib.crc32(request_key.encode('utf-8')), turn]
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def _previous_point(self, history: Sequence[ChatTurn]) -> Optional[PixelPoint]:
        user_turns = [turn for turn in history if turn.role == 'user']
        outcome = extract_decision(user_turns[-1].text)
        return outcome.point if outcome.parsed else None

    def predict(self, history: Sequence[ChatTurn], request_key: str) -> Optional[PixelPoint]:
        """The point this oracle answers with, or None for parse_breaker"""
        if request_key not in self.targets:
            raise InvalidArgumentError(f"No hidden target for {request_key!r}")
        target = self.targets[request_key]
        turn = user_turn_count(history)
        kind = self.config.kind
        dx, dy = self.config.offset

        if kind == 'parse_breaker':
            return None
        if kind == 'perfect':
            return target
        if kind == 'constant_offset':
            return PixelPoint(target.x + dx, target.y + dy)
        if kind == 'seeded_noise':
            sigma = self.config.sigma_for_turn(turn)
            nx, ny = self._rng(request_key, turn).normal(0.0, sigma, size=2)
            return PixelPoint(target.x + float(nx), target.y + float(ny))

        # feedback_aware: the previous answer is read back from the feedback text only
        previous = self._previous_point(history) if turn > 1 else None
        if previous is None:
            return PixelPoint(target.x + dx, target.y + dy)
        gamma = self.config.convergence
        return PixelPoint(target.x + gamma * (previous.x - target.x), target.y + gamma * (previous.y - target.y))

    def complete(self, history: Sequence[ChatTurn], request_key: Optional[str] = None) -> str:
        validate_history(history)
        point = self.predict(history, request_key)
        if point is None:
            return "I could not find the requested position on this screenshot."
        return f"The cursor belongs here: ({_format_coordinate(point.x)},{_format_coordinate(point.y)})"


def build_backend(backend_config: Dict[str, Any], seed: int,
                  targets: Optional[Dict[str, PixelPoint]] = None) -> Backend:
    """
    Backend selected by the configuration

    Args:
        backend_config: The backend configuration section
        seed: Mock seed (already derived from the run seed)
        targets: Hidden targets by sample id, needed by mock backends
    """
    kind = backend_config.get('kind', 'http')
    if kind == 'http':
        return OpenAICompatibleBackend(backend_config)
    if kind == 'mock':
        mock_config = MockOracleConfig.from_config(backend_config.get('mock', {}), seed)
        logger.info(f"Using mock backend '{mock_config.kind}' (seed {seed})")
        return MockOracleBackend(mock_config, targets or {})
    raise ConfigurationError(f"Unknown backend kind: {kind!r}")
