"""Text embedders and an exact cosine top-k index.

Two backends ship: :class:`HashingEmbedder`, a dependency-free character
3-gram embedder used for tests and offline runs, and :class:`HttpEmbedder`,
which talks to any endpoint speaking the common embeddings-API shape.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import httpx
import numpy as np

from .errors import InvalidArgumentError, SnapshotError, TransportError

logger = logging.getLogger(__name__)

INDEX_FORMAT_VERSION = 1


class Embedder(Protocol):
    backend_id: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_many(self, texts: Sequence[str]) -> np.ndarray: ...


def _normalize(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return v
    return v / norm


def _check_text(text: str) -> None:
    if not isinstance(text, str) or not text.strip():
        raise InvalidArgumentError("cannot embed empty text")


class HashingEmbedder:
    """Hashed character 3-gram counts folded into ``dim`` buckets.

    Text is lowercased and whitespace-collapsed, then padded with two spaces
    on each side so word-initial and word-final grams carry boundary
    information ("nyc" and "new york city" share the leading gram).
    """

    def __init__(self, dim: int = 256) -> None:
        self.dim = dim
        self.backend_id = f"hash3-{dim}"

    def _bucket(self, gram: str) -> int:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def embed(self, text: str) -> np.ndarray:
        _check_text(text)
        padded = "  " + " ".join(text.lower().split()) + "  "
        v = np.zeros(self.dim, dtype=np.float64)
        for i in range(len(padded) - 2):
            v[self._bucket(padded[i : i + 3])] += 1.0
        return _normalize(v)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([self.embed(t) for t in texts])


class HttpEmbedder:
    """Remote embeddings endpoint: POST {"model", "input": [...]}."""

    def __init__(
        self,
        url: str,
        model: str,
        dim: int,
        token_env: str = "ONTOKG_EMBED_TOKEN",
        timeout: float = 60.0,
        max_retries: int = 2,
        batch_size: int = 64,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.url = url
        self.model = model
        self.dim = dim
        self.backend_id = f"http:{model}"
        self._token = os.environ.get(token_env)
        self._max_retries = max_retries
        self._batch_size = batch_size
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _post(self, batch: list[str]) -> list[list[float]]:
        headers = {"Authorization": f"Bearer {self._token}"} if self._token else {}
        last: Exception | None = None
        for _ in range(self._max_retries + 1):
            try:
                resp = self._client.post(
                    self.url, json={"model": self.model, "input": batch}, headers=headers)
                resp.raise_for_status()
                return [row["embedding"] for row in resp.json()["data"]]
            except (httpx.TransportError, httpx.HTTPStatusError, ValueError, KeyError) as exc:
                last = exc
                logger.warning("embedding request failed: %s", exc)
        raise TransportError(f"embedding backend unreachable: {last}")

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        for t in texts:
            _check_text(t)
        rows: list[np.ndarray] = []
        for start in range(0, len(texts), self._batch_size):
            for vec in self._post(list(texts[start : start + self._batch_size])):
                arr = np.asarray(vec, dtype=np.float64)
                if arr.shape != (self.dim,):
                    raise InvalidArgumentError(
                        f"backend returned dimension {arr.shape}, expected {self.dim}"
                    )
                rows.append(_normalize(arr))
        return np.stack(rows) if rows else np.zeros((0, self.dim))


class CachedEmbedder:
    """Memoizes another embedder by (backend id, text); persistable."""

    def __init__(self, inner: Embedder, path: str | Path | None = None) -> None:
        self.inner = inner
        self.dim = inner.dim
        self.backend_id = inner.backend_id
        self.path = Path(path) if path else None
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if rec["backend"] == self.backend_id:
                    self._cache[rec["text"]] = np.asarray(rec["vector"], dtype=np.float64)

    def save(self) -> None:
        if not self.path:
            return
        with open(self.path, "w", encoding="utf-8") as fh:
            for text in sorted(self._cache):
                rec = {"backend": self.backend_id, "text": text,
                       "vector": self._cache[text].tolist()}
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        with self._lock:
            missing = sorted({t for t in texts if t not in self._cache})
        if missing:
            vecs = self.inner.embed_many(missing)
            with self._lock:
                for t, v in zip(missing, vecs):
                    self._cache[t] = v
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([self._cache[t] for t in texts])


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


@dataclass(frozen=True)
class Hit:
    key: str
    text: str
    score: float


class VectorIndex:
    """Exact brute-force cosine index over (key, text) entries.

    Single writer, many readers: ``upsert`` takes an exclusive lock, reads
    work on an immutable view of the arrays.
    """

    def __init__(self, embedder: Embedder, min_score: float | None = None) -> None:
        self.embedder = embedder
        self.dim = embedder.dim
        self.min_score = min_score
        self._keys: list[str] = []
        self._texts: list[str] = []
        self._tags: list[str | None] = []
        self._rows: dict[tuple[str, str], int] = {}
        self._matrix = np.zeros((0, self.dim))
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._keys)

    def entries(self) -> list[tuple[str, str, str | None]]:
        return list(zip(self._keys, self._texts, self._tags))

    def vector(self, key: str, text: str) -> np.ndarray:
        return self._matrix[self._rows[(key, text)]].copy()

    def upsert(self, key: str, texts: Iterable[str], tag: str | None = None) -> int:
        texts = list(dict.fromkeys(texts))
        if not texts:
            raise InvalidArgumentError("upsert requires at least one text")
        vecs = self.embedder.embed_many(texts)
        return self._write(key, texts, vecs, tag)

    def _write(self, key: str, texts: list[str], vecs: np.ndarray, tag: str | None) -> int:
        if vecs.ndim != 2 or vecs.shape[1] != self.dim:
            raise InvalidArgumentError(
                f"vector dimension {vecs.shape[-1]} does not match index dimension {self.dim}"
            )
        with self._lock:
            new_rows = []
            matrix = self._matrix
            for text, vec in zip(texts, vecs):
                row = self._rows.get((key, text))
                if row is None:
                    self._rows[(key, text)] = len(self._keys) + len(new_rows)
                    new_rows.append(vec)
                    self._keys.append(key)
                    self._texts.append(text)
                    self._tags.append(tag)
                else:
                    if matrix is self._matrix:
                        matrix = matrix.copy()
                    matrix[row] = vec
                    self._tags[row] = tag
            if new_rows:
                matrix = np.vstack([matrix, np.stack(new_rows)])
            self._matrix = matrix
        return len(texts)

    def retag(self, key: str, tag: str | None) -> None:
        with self._lock:
            for (k, _), row in self._rows.items():
                if k == key:
                    self._tags[row] = tag

    def top_k(
        self,
        query: str,
        k: int,
        tag_filter: set[str] | frozenset[str] | None = None,
    ) -> list[Hit]:
        if k < 1:
            raise InvalidArgumentError("k must be >= 1")
        q = self.embedder.embed(query)
        return self.top_k_vector(q, k, tag_filter)

    def top_k_vector(
        self,
        q: np.ndarray,
        k: int | None,
        tag_filter: set[str] | frozenset[str] | None = None,
    ) -> list[Hit]:
        matrix, keys, texts, tags = self._matrix, self._keys, self._texts, self._tags
        n = matrix.shape[0]
        if n == 0:
            return []
        scores = np.clip(matrix @ q, -1.0, 1.0)
        rows = range(n)
        if tag_filter is not None:
            rows = [i for i in rows if tags[i] in tag_filter]
        hits = [Hit(keys[i], texts[i], float(scores[i])) for i in rows]
        if self.min_score is not None:
            hits = [h for h in hits if h.score >= self.min_score]
        hits.sort(key=lambda h: (-h.score, h.key, h.text))
        return hits if k is None else hits[:k]

    def save(self, path: str | Path) -> None:
        """Write a versioned JSON Lines snapshot; floats round-trip exactly."""
        with open(path, "w", encoding="utf-8") as fh:
            header = {"format": "ontokg-index", "version": INDEX_FORMAT_VERSION,
                      "dim": self.dim, "backend": self.embedder.backend_id}
            fh.write(json.dumps(header) + "\n")
            for i, (key, text, tag) in enumerate(self.entries()):
                rec = {"key": key, "text": text, "tag": tag,
                       "vector": self._matrix[i].tolist()}
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path, embedder: Embedder) -> "VectorIndex":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline() or "{}")
            if header.get("format") != "ontokg-index":
                raise SnapshotError(f"{path}: not an index snapshot")
            if header.get("version") != INDEX_FORMAT_VERSION:
                raise SnapshotError(f"{path}: unsupported index version {header.get('version')}")
            if header.get("dim") != embedder.dim:
                raise SnapshotError(f"{path}: dimension {header.get('dim')} != embedder {embedder.dim}")
            index = cls(embedder)
            for line in fh:
                rec = json.loads(line)
                vec = np.asarray([rec["vector"]], dtype=np.float64)
                index._write(rec["key"], [rec["text"]], vec, rec["tag"])
        return index
