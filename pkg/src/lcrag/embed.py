"""Embedding providers: remote adapters plus a deterministic local hash embedder.

Remote providers (OpenAI-, Voyage-, and HF-style endpoints) share one wire
contract per family: a request carrying the model id and input texts, and a
response carrying vectors in input order. The local ``hash-<dim>`` embedder is
a pure function of the text, so fixtures and evaluation runs are portable
across machines and runs.
"""

from __future__ import annotations

import hashlib
import os
import re
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import (
    BatchError,
    DegenerateVector,
    DimensionMismatch,
    InvalidInput,
    ProviderError,
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_HASH_KEY = b"lcrag-hash-embed-v1"  # fixed key: vectors must be stable across runs

RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY = 0.5


@dataclass(frozen=True)
class EmbedderSpec:
    """Identity and transport details for one embedding model."""

    embedder_id: str
    dim: int
    endpoint: str  # provider URL, or "local" for the hash embedder
    credentials_env: str = ""
    family: str = "local"  # local | openai | voyage | hf
    display_name: str = ""

    def __post_init__(self):
        if self.dim <= 0:
            raise InvalidInput(f"embedder dim must be positive, got {self.dim}")


# The five model/dimension combinations used in the retrieval evaluation,
# plus the local hash embedder for hermetic runs.
PAPER_EMBEDDERS = [
    EmbedderSpec(
        "oai-text-embedding-3-large-3072", 3072,
        "https://api.openai.com/v1/embeddings", "OPENAI_API_KEY",
        family="openai", display_name="OAI-text-embedding-3-large",
    ),
    EmbedderSpec(
        "oai-text-embedding-3-small-1536", 1536,
        "https://api.openai.com/v1/embeddings", "OPENAI_API_KEY",
        family="openai", display_name="OAI-text-embedding-3-small",
    ),
    EmbedderSpec(
        "voyage-3-large-1024", 1024,
        "https://api.voyageai.com/v1/embeddings", "VOYAGE_API_KEY",
        family="voyage", display_name="voyage-3-large",
    ),
    EmbedderSpec(
        "voyage-3-lite-512", 512,
        "https://api.voyageai.com/v1/embeddings", "VOYAGE_API_KEY",
        family="voyage", display_name="voyage-3-lite",
    ),
    EmbedderSpec(
        "ms-e5-large-1024", 1024,
        "https://api-inference.huggingface.co/models/intfloat/e5-large-v2",
        "HF_API_TOKEN", family="hf", display_name="microsoft-e5-large",
    ),
]

LOCAL_EMBEDDERS = [
    EmbedderSpec("hash-64", 64, "local", display_name="local-hash"),
    EmbedderSpec("hash-256", 256, "local", display_name="local-hash"),
]

_REGISTRY = {spec.embedder_id: spec for spec in PAPER_EMBEDDERS + LOCAL_EMBEDDERS}


def get_spec(embedder_id: str) -> EmbedderSpec:
    """Resolve an embedder id; `hash-<dim>` ids resolve for any dim >= 8."""
    if embedder_id in _REGISTRY:
        return _REGISTRY[embedder_id]
    m = re.fullmatch(r"hash-(\d+)", embedder_id)
    if m:
        dim = int(m.group(1))
        if dim < 8:
            raise InvalidInput(f"hash embedder dim must be >= 8, got {dim}")
        return EmbedderSpec(embedder_id, dim, "local", display_name="local-hash")
    raise InvalidInput(f"unknown embedder id: {embedder_id!r}")


def list_embedders() -> list[EmbedderSpec]:
    return PAPER_EMBEDDERS + LOCAL_EMBEDDERS


def _token_hash(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=_HASH_KEY)
    return int.from_bytes(digest.digest(), "little")


def hash_embed(text: str, dim: int) -> np.ndarray:
    """Signed bag-of-tokens embedding, L2-normalized, float32.

    Tokens are lowercased [a-z0-9]+ runs; each occurrence adds +-1 (sign from
    the hash's top bit) to bucket ``hash % dim``. Deterministic across runs
    and platforms by construction.
    """
    if dim < 8:
        raise InvalidInput(f"hash embedder dim must be >= 8, got {dim}")
    counts = np.zeros(dim, dtype=np.float64)
    for token in _TOKEN_RE.findall(text.lower()):
        h = _token_hash(token)
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        counts[h % dim] += sign
    norm = float(np.linalg.norm(counts))
    if norm == 0.0:
        raise DegenerateVector("text produced no tokens (or all buckets cancelled)")
    return (counts / norm).astype(np.float32)


def validate_vector(vec, dim: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float32)
    if vec.ndim != 1 or vec.shape[0] != dim:
        raise DimensionMismatch(f"expected dim {dim}, got vector of shape {vec.shape}")
    if not np.isfinite(vec).all():
        raise InvalidInput("embedding contains NaN/Inf components")
    return vec


class HashEmbedder:
    """Local deterministic embedder; stateless and thread-safe."""

    def __init__(self, spec: EmbedderSpec):
        self.spec = spec

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise InvalidInput("cannot embed empty text")
        return hash_embed(text, self.spec.dim)

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        outcomes, failed = [], 0
        for text in texts:
            try:
                outcomes.append(self.embed(text))
            except (InvalidInput, DegenerateVector) as exc:
                outcomes.append(str(exc))
                failed += 1
        if failed:
            raise BatchError(f"{failed} of {len(texts)} inputs failed", outcomes)
        return outcomes


class RemoteEmbedder:
    """JSON-over-HTTP adapter for the OpenAI/Voyage/HF provider families.

    Retries transient transport failures (3 attempts, exponential backoff);
    auth and other permanent rejections surface immediately. A semaphore caps
    concurrent in-flight requests per adapter instance.
    """

    def __init__(self, spec: EmbedderSpec, max_concurrency: int = 4,
                 retry_base_delay: float = RETRY_BASE_DELAY):
        self.spec = spec
        self._gate = threading.Semaphore(max_concurrency)
        self._retry_base_delay = retry_base_delay

    def _api_key(self) -> str:
        key = os.environ.get(self.spec.credentials_env, "")
        if not key:
            raise ProviderError(
                f"auth: credential env {self.spec.credentials_env} is not set",
                retryable=False,
            )
        return key

    def _request_body(self, texts: list[str]) -> dict:
        # embedder_id encodes "<model>-<dim>"; the wire model name drops the dim.
        model = self.spec.embedder_id.rsplit("-", 1)[0]
        if self.spec.family == "hf":
            return {"inputs": texts}
        return {"model": model, "input": texts}

    def _parse_response(self, payload, n: int) -> list[np.ndarray]:
        if self.spec.family == "hf":
            rows = list(payload) if isinstance(payload, list) else []
        else:
            data = sorted(payload.get("data", []), key=lambda d: d.get("index", 0))
            rows = [d.get("embedding") for d in data]
        rows = rows + [None] * (n - len(rows))
        if any(r is None for r in rows[:n]):
            outcomes = [
                "missing embedding in provider response" if r is None
                else validate_vector(r, self.spec.dim)
                for r in rows[:n]
            ]
            raise BatchError("provider returned a partial batch", outcomes)
        return [validate_vector(r, self.spec.dim) for r in rows[:n]]

    def _post(self, texts: list[str]):
        import requests

        headers = {"Authorization": f"Bearer {self._api_key()}"}
        last_exc = ProviderError("no attempts made", retryable=True)
        for attempt in range(RETRY_ATTEMPTS):
            try:
                with self._gate:
                    resp = requests.post(
                        self.spec.endpoint, json=self._request_body(texts),
                        headers=headers, timeout=60,
                    )
            except requests.RequestException as exc:
                last_exc = ProviderError(f"transport failure: {exc}", retryable=True)
            else:
                if resp.status_code in (429, 500, 502, 503, 504):
                    last_exc = ProviderError(
                        f"provider returned {resp.status_code}", retryable=True)
                elif resp.status_code >= 400:
                    raise ProviderError(
                        f"provider rejected request ({resp.status_code}): "
                        f"{resp.text[:200]}", retryable=False)
                else:
                    return resp.json()
            if attempt < RETRY_ATTEMPTS - 1:
                time.sleep(self._retry_base_delay * (2 ** attempt))
        raise last_exc

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise InvalidInput("cannot embed empty text")
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        if any(not t for t in texts):
            raise InvalidInput("batch contains empty text")
        if not texts:
            return []
        return self._parse_response(self._post(texts), len(texts))


def get_embedder(spec: EmbedderSpec | str):
    if isinstance(spec, str):
        spec = get_spec(spec)
    if spec.endpoint == "local":
        return HashEmbedder(spec)
    return RemoteEmbedder(spec)


def embed_text(spec: EmbedderSpec | str, text: str) -> np.ndarray:
    """Embed one text with the given embedder; full vector or an error."""
    return get_embedder(spec).embed(text)


def embed_batch(spec: EmbedderSpec | str, texts: list[str]) -> list[np.ndarray]:
    """Embed texts in order. For the local embedder this equals map(embed_text)."""
    if not texts:
        return []
    return get_embedder(spec).embed_batch(texts)
