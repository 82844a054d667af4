"""LLM and embedding providers: HTTP clients plus deterministic offline mocks.

Wire contract for the HTTP providers (documented here and in the README):

* chat endpoint: ``POST <llm_url>`` with body
  ``{"model": ..., "messages": [{"role": "system", "content": ...},
  {"role": "user", "content": ...}]}``; the reply must carry the generated
  text at ``choices[0].message.content``.
* embedding endpoint: ``POST <embed_url>`` with body
  ``{"model": ..., "input": [text, ...]}``; the reply must carry one float
  array per input at ``data[i].embedding``.

Configuration comes from ``MINDGRAPH_LLM_URL``, ``MINDGRAPH_EMBED_URL``,
``MINDGRAPH_API_KEY``, ``MINDGRAPH_LLM_MODEL`` and ``MINDGRAPH_EMBED_MODEL``,
with config-file values taking precedence when given.
"""

from __future__ import annotations

import hashlib
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .text import split_sentences, tokenize


class ProviderError(Exception):
    """Base class for provider failures."""


class TransportError(ProviderError):
    pass


class RateLimitedError(ProviderError):
    pass


class EmptyResponseError(ProviderError):
    pass


class DimensionMismatchError(ProviderError):
    pass


@dataclass
class GenerationRequest:
    prompt: str
    system_prompt: str = ""
    max_retries: int = 2


@dataclass
class ProviderConfig:
    llm_url: str = ""
    embed_url: str = ""
    api_key: str = ""
    llm_model: str = "default-chat"
    embed_model: str = "default-embed"
    embedding_dim: int = 64
    timeout: float = 30.0
    max_retries: int = 2
    backoff_base: float = 0.5
    rate_per_sec: float | None = None
    mock: bool = True

    @classmethod
    def from_env(cls) -> "ProviderConfig":
        cfg = cls()
        cfg.llm_url = os.environ.get("MINDGRAPH_LLM_URL", cfg.llm_url)
        cfg.embed_url = os.environ.get("MINDGRAPH_EMBED_URL", cfg.embed_url)
        cfg.api_key = os.environ.get("MINDGRAPH_API_KEY", cfg.api_key)
        cfg.llm_model = os.environ.get("MINDGRAPH_LLM_MODEL", cfg.llm_model)
        cfg.embed_model = os.environ.get("MINDGRAPH_EMBED_MODEL", cfg.embed_model)
        cfg.mock = not (cfg.llm_url or cfg.embed_url)
        return cfg


class LLMProvider(Protocol):
    def generate(self, request: GenerationRequest) -> str: ...


class EmbeddingProvider(Protocol):
    @property
    def dim(self) -> int: ...

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


# -- vector helpers ----------------------------------------------------------


def normalize(vector: np.ndarray) -> np.ndarray:
    """L2-normalize one vector; zero vectors are rejected."""
    v = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return (v / norm).astype(np.float32)


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero vector")
    return (m / norms[:, None]).astype(np.float32)


def similarities(matrix: np.ndarray, vector: np.ndarray) -> np.ndarray:
    """Cosine of each matrix row against ``vector`` for pre-normalized inputs.

    This is the single dot-product primitive for the whole engine. It uses
    einsum on float64 operands because that kernel is bitwise reproducible
    across batch shapes and row orders, which the matrix/stepwise agreement
    tests rely on; BLAS matmul is not.
    """
    m = np.asarray(matrix, dtype=np.float64)
    v = np.asarray(vector, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionMismatchError(f"cannot dot {m.shape} with {v.shape}")
    return np.clip(np.einsum("nd,d->n", m, v), -1.0, 1.0)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    return float(similarities(np.asarray(u)[None, :], v)[0])


class TokenBucket:
    """Small thread-safe rate limiter shared by concurrent provider calls."""

    def __init__(
        self,
        rate_per_sec: float,
        sleep: Callable[[float], None] = time.sleep,
        now: Callable[[], float] = time.monotonic,
    ):
        if rate_per_sec <= 0:
            raise ValueError("rate must be positive")
        self._interval = 1.0 / rate_per_sec
        self._lock = threading.Lock()
        self._next_free = 0.0
        self._sleep = sleep
        self._now = now

    def acquire(self) -> None:
        with self._lock:
            now = self._now()
            wait = self._next_free - now
            self._next_free = max(now, self._next_free) + self._interval
        if wait > 0:
            self._sleep(wait)


# -- HTTP providers ----------------------------------------------------------


def _default_post(url: str, payload: dict, headers: dict, timeout: float):
    import requests

    return requests.post(url, json=payload, headers=headers, timeout=timeout)


class _HttpBase:
    def __init__(
        self,
        config: ProviderConfig,
        post: Callable = _default_post,
        sleep: Callable[[float], None] = time.sleep,
        bucket: TokenBucket | None = None,
    ):
        self.config = config
        self._post = post
        self._sleep = sleep
        self._bucket = bucket
        if bucket is None and config.rate_per_sec:
            self._bucket = TokenBucket(config.rate_per_sec, sleep=sleep)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        return headers

    def _request(self, url: str, payload: dict, max_retries: int) -> dict:
        if not url:
            raise TransportError("no endpoint URL configured")
        last: ProviderError | None = None
        for attempt in range(max_retries + 1):
            if self._bucket is not None:
                self._bucket.acquire()
            try:
                response = self._post(url, payload, self._headers(), self.config.timeout)
            except Exception as exc:  # connection refused, DNS, timeout
                last = TransportError(str(exc))
            else:
                if response.status_code == 429:
                    last = RateLimitedError("rate limited by endpoint")
                elif response.status_code != 200:
                    last = TransportError(f"endpoint returned {response.status_code}")
                else:
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise TransportError(f"malformed JSON reply: {exc}") from exc
            if attempt < max_retries:
                self._sleep(self.config.backoff_base * (2**attempt))
        assert last is not None
        raise last


class HttpLLMProvider(_HttpBase):
    def generate(self, request: GenerationRequest) -> str:
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.append({"role": "user", "content": request.prompt})
        payload = {"model": self.config.llm_model, "messages": messages}
        data = self._request(self.config.llm_url, payload, request.max_retries)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"reply missing choices[0].message.content: {exc}") from exc
        if not isinstance(content, str) or not content.strip():
            raise EmptyResponseError("endpoint returned empty text")
        return content


class HttpEmbeddingProvider(_HttpBase):
    @property
    def dim(self) -> int:
        return self.config.embedding_dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        payload = {"model": self.config.embed_model, "input": texts}
        data = self._request(self.config.embed_url, payload, self.config.max_retries)
        try:
            rows = [item["embedding"] for item in data["data"]]
        except (KeyError, TypeError) as exc:
            raise TransportError(f"reply missing data[*].embedding: {exc}") from exc
        if len(rows) != len(texts):
            raise EmptyResponseError(f"asked for {len(texts)} embeddings, got {len(rows)}")
        matrix = np.asarray(rows, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"expected dimension {self.dim}, endpoint returned shape {matrix.shape}"
            )
        try:
            return normalize_rows(matrix)
        except ValueError as exc:
            raise EmptyResponseError(str(exc)) from exc


# -- deterministic mocks -----------------------------------------------------

_TREND_RE = re.compile(r"what is the trend of (.+)", re.IGNORECASE)
_ENV_RE = re.compile(
    r"what environmental factors (?:might|may|could|can) (\w+) (.+)", re.IGNORECASE
)


class MockLLMProvider:
    """Pure function of the prompt; dispatches on the template TASK tag.

    extract-facts  -> one numbered restatement per input sentence
    draw-mind-map  -> canonical outline: topic, one route, the facts as leaves
    key-points     -> one declarative answer-key line per question clause
    """

    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def generate(self, request: GenerationRequest) -> str:
        with self._lock:
            self.calls += 1
        task = ""
        for line in request.system_prompt.splitlines():
            if line.startswith("TASK: "):
                task = line.removeprefix("TASK: ").strip()
                break
        if task == "extract-facts":
            return self._extract(request.prompt)
        if task == "draw-mind-map":
            return self._mind_map(request.prompt)
        if task == "key-points":
            return self._key_points(request.prompt)
        raise EmptyResponseError(f"mock cannot answer untagged prompt {task!r}")

    @staticmethod
    def _section(prompt: str, label: str) -> str:
        """Text following ``label`` up to the next ALL-CAPS label line."""
        lines = prompt.splitlines()
        out: list[str] = []
        grabbing = False
        for line in lines:
            if line.startswith(label):
                grabbing = True
                rest = line[len(label) :].strip()
                if rest:
                    out.append(rest)
                continue
            if grabbing and re.match(r"^[A-Z][A-Z ]+:", line):
                break
            if grabbing:
                out.append(line)
        return "\n".join(out).strip()

    def _extract(self, prompt: str) -> str:
        title = self._section(prompt, "TITLE:").splitlines()[0].strip() if self._section(prompt, "TITLE:") else ""
        body = self._section(prompt, "TEXT:")
        sentences = split_sentences(body)
        topic = title or " ".join(tokenize(body)[:8]) or "untitled"
        lines = [f"MAIN TOPIC: {topic}", "FACTS:"]
        for i, sentence in enumerate(sentences, start=1):
            lines.append(f"{i}. {sentence}")
        return "\n".join(lines)

    def _mind_map(self, prompt: str) -> str:
        topic = self._section(prompt, "MAIN TOPIC:").splitlines()[0].strip()
        facts_block = self._section(prompt, "FACTS:")
        facts = []
        for line in facts_block.splitlines():
            m = re.match(r"^\s*\d+[.)]\s*(.+)$", line)
            if m:
                facts.append(m.group(1).strip())
        out = [f"- {topic}", "  - key facts"]
        out.extend(f"    - {fact}" for fact in facts)
        return "\n".join(out)

    def _key_points(self, prompt: str) -> str:
        question = self._section(prompt, "QUESTION:")
        clauses = [c.strip() for c in question.split("?") if c.strip()]
        lines: list[str] = []
        for clause in clauses:
            m = _TREND_RE.search(clause)
            if m:
                subject = m.group(1).strip().rstrip(".")
                lines.append(f"The trend of {subject} is increasing or decreasing.")
                continue
            m = _ENV_RE.search(clause)
            if m:
                verb, subject = m.group(1), m.group(2).strip().rstrip(".")
                lines.append(f"Screen time may {verb} {subject}.")
                lines.append(f"Indoor air quality may {verb} {subject}.")
                continue
            cleaned = re.sub(r"^(and|also|then)\b\s*", "", clause, flags=re.IGNORECASE)
            lines.append(f"Key information: {cleaned}.")
        return "\n".join(lines)


class HashedBagEmbedder:
    """Bag-of-tokens embedding: L2-normalized sum of hashed one-hot basis vectors.

    Deterministic across processes (blake2b, not the salted builtin hash), and
    batching-invariant because each text is embedded independently. Texts that
    share no tokens land on (near-)orthogonal axes; shared tokens strictly
    increase the cosine for fixed token counts.
    """

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    def _index(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self._dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self._dim), dtype=np.float32)
        for row, text in enumerate(texts):
            tokens = tokenize(text)
            if not tokens:
                raise ValueError(f"text {text!r} has no tokens to embed")
            acc = np.zeros(self._dim, dtype=np.float64)
            for token in tokens:
                acc[self._index(token)] += 1.0
            out[row] = normalize(acc)
        return out


class RandomUnitEmbedder:
    """Per-text seeded random unit vector; a continuous-valued test double.

    Same determinism and batching contract as the bag embedder, but distinct
    texts map to independent directions, which gives continuously distributed
    similarities for randomized equivalence tests and benchmarks.
    """

    def __init__(self, dim: int = 64, salt: str = ""):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self._dim = dim
        self._salt = salt

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self._dim), dtype=np.float32)
        for row, text in enumerate(texts):
            digest = hashlib.blake2b((self._salt + text).encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "big"))
            out[row] = normalize(rng.standard_normal(self._dim))
        return out


@dataclass
class ProviderPair:
    llm: LLMProvider
    embedder: EmbeddingProvider
    config: ProviderConfig = field(default_factory=ProviderConfig)


def resolve_providers(config: ProviderConfig) -> ProviderPair:
    """Build the provider pair a config asks for (mocks by default)."""
    if config.mock:
        return ProviderPair(MockLLMProvider(), HashedBagEmbedder(config.embedding_dim), config)
    if not config.llm_url or not config.embed_url:
        raise ValueError("non-mock config requires both llm_url and embed_url")
    return ProviderPair(HttpLLMProvider(config), HttpEmbeddingProvider(config), config)
