import hashlib
import logging
import os
from abc import ABC, abstractmethod
from collections import Counter
from functools import lru_cache

import numpy as np

from flakidock.core.errors import DimensionMismatch, ProviderUnavailable, TokenLimit, ZeroVector
from flakidock.schemas.embedding import EmbeddingVector

logger = logging.getLogger(__name__)

# Output sizes of hosted embedding models we know; others are learned from the first reply
KNOWN_DIMS = {
    "text-embedding-ada-002": 1536,
    "text-embedding-3-small": 1536,
    "text-embedding-3-large": 3072,
}


class EmbeddingProvider(ABC):
    provider_id: str = "abstract"
    dim: int | None = None

    @abstractmethod
    def embed(self, text: str) -> EmbeddingVector:
        raise NotImplementedError

    def embed_many(self, texts: list[str]) -> list[EmbeddingVector]:
        return [self.embed(text) for text in texts]

    def _vector(self, values) -> EmbeddingVector:
        values = [float(v) for v in values]
        if self.dim is None:
            self.dim = len(values)
        elif len(values) != self.dim:
            raise DimensionMismatch(f"{self.provider_id} returned {len(values)} values, declared {self.dim}")
        return EmbeddingVector(values=tuple(values), dim=self.dim, provider_id=self.provider_id)


@lru_cache(maxsize=65536)
def _bucket(gram: str, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    index = int.from_bytes(digest[:4], "little") % dim
    sign = 1.0 if digest[4] & 1 else -1.0
    return index, sign


class HashingEmbeddingProvider(EmbeddingProvider):
    """Offline provider: signed feature hashing of character trigrams, L2-normalized."""

    NGRAM = 3

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.provider_id = f"hashing-{dim}"

    def embed(self, text: str) -> EmbeddingVector:
        if len(text) < self.NGRAM:
            grams = Counter([text])
        else:
            grams = Counter(text[i:i + self.NGRAM] for i in range(len(text) - self.NGRAM + 1))
        values = np.zeros(self.dim, dtype=np.float64)
        for gram, count in grams.items():
            index, sign = _bucket(gram, self.dim)
            values[index] += sign * count
        norm = np.linalg.norm(values)
        if norm == 0.0:
            # every bucket cancelled out; fall back to the whole-text bucket
            index, sign = _bucket(text, self.dim)
            values[index] = sign
            norm = 1.0
        return self._vector(values / norm)


class LiteLLMEmbeddingProvider(EmbeddingProvider):
    """Hosted embedding model reached through litellm."""

    def __init__(
        self,
        model: str,
        api_base: str = "",
        api_key_env: str = "OPENAI_API_KEY",
        max_tokens: int = 8191,
        timeout: float = 60.0,
        truncate: bool = True,
    ):
        self.model = model
        self.api_base = api_base or None
        self.api_key_env = api_key_env
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.truncate = truncate
        self.provider_id = f"litellm:{model}"
        self.dim = KNOWN_DIMS.get(model)

    def _fit(self, text: str) -> str:
        import litellm

        tokens = litellm.encode(model=self.model, text=text)
        if len(tokens) <= self.max_tokens:
            return text
        if not self.truncate:
            raise TokenLimit(f"{len(tokens)} tokens exceed the {self.max_tokens}-token limit of {self.model}")
        logger.info("truncating embedding input from %d to %d tokens", len(tokens), self.max_tokens)
        return litellm.decode(model=self.model, tokens=list(tokens[: self.max_tokens]))

    def embed(self, text: str) -> EmbeddingVector:
        import litellm

        text = self._fit(text)
        try:
            response = litellm.embedding(
                model=self.model,
                input=[text],
                api_base=self.api_base,
                api_key=os.environ.get(self.api_key_env),
                timeout=self.timeout,
            )
        except Exception as exc:
            raise ProviderUnavailable(f"embedding call to {self.model} failed: {exc}") from exc
        item = response.data[0]
        values = item["embedding"] if isinstance(item, dict) else item.embedding
        logger.info("embedded %d chars via %s", len(text), self.provider_id)
        return self._vector(values)


class SentenceTransformerProvider(EmbeddingProvider):
    """Local sentence-transformers model; the package is only needed when selected."""

    def __init__(self, model_name: str = "all-mpnet-base-v2"):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ProviderUnavailable(
                "sentence-transformers is not installed; pip install sentence-transformers"
            ) from exc
        self.model = SentenceTransformer(model_name)
        self.provider_id = f"sentence-transformers:{model_name}"
        self.dim = self.model.get_sentence_embedding_dimension()

    def embed(self, text: str) -> EmbeddingVector:
        values = self.model.encode([text], convert_to_numpy=True, normalize_embeddings=True)[0]
        return self._vector(values)

    def embed_many(self, texts: list[str]) -> list[EmbeddingVector]:
        rows = self.model.encode(texts, convert_to_numpy=True, normalize_embeddings=True)
        return [self._vector(row) for row in rows]


def embed(text: str, provider: EmbeddingProvider) -> EmbeddingVector:
    if not text:
        raise ValueError("cannot embed empty text")
    return provider.embed(text)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimensionMismatch(f"cannot compare a {a.dim}-dim vector with a {b.dim}-dim vector")
    va = np.asarray(a.values, dtype=np.float64)
    vb = np.asarray(b.values, dtype=np.float64)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine is undefined for the zero vector")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def embedding_provider(settings) -> EmbeddingProvider:
    """Query-embedding role (demonstration retrieval)."""
    if settings.EMBEDDING_PROVIDER == "litellm":
        return LiteLLMEmbeddingProvider(
            model=settings.EMBEDDING_MODEL,
            api_base=settings.EMBEDDING_API_BASE,
            api_key_env=settings.EMBEDDING_API_KEY_ENV,
            max_tokens=settings.EMBEDDING_MAX_TOKENS,
            timeout=settings.EMBEDDING_TIMEOUT,
        )
    return HashingEmbeddingProvider(settings.HASHING_DIM)


def sentence_provider(settings) -> EmbeddingProvider:
    """Sentence-similarity role (clustering, feedback matching)."""
    if settings.SENTENCE_PROVIDER == "sentence-transformers":
        return SentenceTransformerProvider(settings.SENTENCE_MODEL)
    if settings.SENTENCE_PROVIDER == "litellm":
        return LiteLLMEmbeddingProvider(
            model=settings.SENTENCE_MODEL,
            api_base=settings.EMBEDDING_API_BASE,
            api_key_env=settings.EMBEDDING_API_KEY_ENV,
            max_tokens=settings.EMBEDDING_MAX_TOKENS,
            timeout=settings.EMBEDDING_TIMEOUT,
        )
    return HashingEmbeddingProvider(settings.HASHING_DIM)
