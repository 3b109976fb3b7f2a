"""Example library and weighted multi-channel retrieval.

Each training example is embedded on four channels (question, query,
database fields, result fields). A query is scored against a record as

    Sim = w_nlq * cos(nlq) + w_other * (cos(nosql) + cos(db_fields) + cos(result_fields))

and channels the caller does not supply contribute nothing.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

import httpx
import numpy as np

from .errors import DimensionMismatch, EmptyLibrary, ProviderError

log = logging.getLogger(__name__)

CHANNELS = ("nlq", "nosql", "db_fields", "result_fields")
MAGIC = b"T2NVLIB1"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ExampleRecord:
    id: str
    nlq: str
    nosql: str
    db_fields: str = ""
    result_fields: str = ""
    db_id: str = ""

    def __post_init__(self):
        if not self.nlq or not self.nosql:
            raise ValueError(f"record {self.id!r} needs both a question and a query")
        object.__setattr__(self, "id", str(self.id))

    def channel(self, name: str) -> str:
        return getattr(self, name)

    @classmethod
    def from_json(cls, blob: Mapping[str, Any]) -> "ExampleRecord":
        def joined(v):
            return ",".join(v) if isinstance(v, (list, tuple)) else (v or "")
        return cls(
            id=str(blob["id"]),
            nlq=blob["nlq"],
            nosql=blob.get("nosql") or blob.get("gold") or "",
            db_fields=joined(blob.get("db_fields")),
            result_fields=joined(blob.get("result_fields")),
            db_id=blob.get("db_id", ""),
        )

    def to_json(self) -> dict[str, str]:
        return asdict(self)


@dataclass(frozen=True)
class RetrievalWeights:
    w_nlq: float = 1.0
    w_other: float = 0.3

    def __post_init__(self):
        if not (self.w_nlq > 0 and self.w_other > 0):
            raise ValueError("retrieval weights must be strictly positive")


# -- embedders -----------------------------------------------------------------------------


class Embedder(Protocol):
    tag: str
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    # an empty text has no features; it stays the zero vector and scores 0 everywhere
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


class LocalHashEmbedder:
    """Offline embedder: hashed counts of character n-grams.

    Fully determined by ``dim``, ``seed`` and ``ngrams``; the same text always maps
    to the same vector on every platform.
    """

    def __init__(self, dim: int = 256, seed: int = 0, ngrams: tuple[int, ...] = (1, 2, 3)):
        self.dim = dim
        self.seed = seed
        self.ngrams = tuple(ngrams)
        self._key = seed.to_bytes(8, "little", signed=False)
        self.tag = f"local-hash:dim={dim}:seed={seed}:n={','.join(map(str, self.ngrams))}"

    def _vector(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        t = f" {' '.join(text.lower().split())} "
        if not t.strip():
            return v
        for n in self.ngrams:
            for i in range(len(t) - n + 1):
                h = hashlib.blake2b(t[i:i + n].encode("utf-8"), digest_size=8, key=self._key).digest()
                v[int.from_bytes(h, "little") % self.dim] += 1.0
        return v

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return _unit_rows(np.stack([self._vector(t) for t in texts]))


class RemoteEmbedder:
    """Client for an OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(self, url: str, model: str = "text-embedding-ada-002", dim: int = 1536,
                 api_key_env: str = "OPENAI_API_KEY", timeout: float = 60.0,
                 client: httpx.Client | None = None):
        self.url = url.rstrip("/")
        self.model = model
        self.dim = dim
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._client = client
        self.tag = f"remote:{model}:dim={dim}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        client = self._client or httpx.Client(timeout=self.timeout)
        # the endpoint rejects empty strings; a single space embeds as "nothing"
        payload = {"model": self.model, "input": [t or " " for t in texts]}
        try:
            resp = client.post(f"{self.url}/embeddings", json=payload, headers=headers)
        except httpx.HTTPError as exc:
            raise ProviderError(None, f"embedding request failed: {exc}") from exc
        finally:
            if self._client is None:
                client.close()
        if resp.status_code != 200:
            raise ProviderError(resp.status_code, resp.text[:500])
        try:
            data = sorted(resp.json()["data"], key=lambda d: d.get("index", 0))
            m = np.array([d["embedding"] for d in data], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(resp.status_code, f"malformed embedding reply: {exc}") from exc
        if m.ndim != 2 or m.shape[0] != len(texts):
            raise ProviderError(resp.status_code, f"expected {len(texts)} embeddings, got {m.shape[0]}")
        if m.shape[1] != self.dim:
            raise DimensionMismatch(f"expected dimension {self.dim}, provider returned {m.shape[1]}")
        return _unit_rows(m)


# -- the library ---------------------------------------------------------------------------


class VectorLibrary:
    """Records plus a ``(n, 4, dim)`` array of per-channel unit vectors."""

    def __init__(self, records: Sequence[ExampleRecord], vectors: np.ndarray, provider_tag: str):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 3 or vectors.shape[:2] != (len(records), len(CHANNELS)):
            raise ValueError(f"vector array of shape {vectors.shape} does not fit {len(records)} records")
        self.records = tuple(records)
        self.vectors = vectors
        self.provider_tag = provider_tag

    @property
    def dim(self) -> int:
        return self.vectors.shape[2]

    def __len__(self) -> int:
        return len(self.records)

    def channels_of(self, i: int) -> dict[str, np.ndarray]:
        return {c: self.vectors[i, j] for j, c in enumerate(CHANNELS)}

    def to_bytes(self) -> bytes:
        header = {
            "version": FORMAT_VERSION,
            "provider_tag": self.provider_tag,
            "dimension": self.dim,
            "channels": list(CHANNELS),
            "records": [r.to_json() for r in self.records],
        }
        head = json.dumps(header, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
        body = self.vectors.astype("<f8").tobytes(order="C")
        return MAGIC + struct.pack("<I", len(head)) + head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "VectorLibrary":
        if blob[:8] != MAGIC:
            raise ValueError("not a vector library file")
        (n,) = struct.unpack("<I", blob[8:12])
        header = json.loads(blob[12:12 + n].decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported library version {header.get('version')}")
        if header["channels"] != list(CHANNELS):
            raise ValueError(f"unexpected channel layout {header['channels']}")
        records = [ExampleRecord(**r) for r in header["records"]]
        arr = np.frombuffer(blob[12 + n:], dtype="<f8")
        arr = arr.reshape(len(records), len(CHANNELS), header["dimension"]).astype(np.float64)
        return cls(records, arr, header["provider_tag"])

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        blob = self.to_bytes()
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(blob)
        tmp.replace(path)
        manifest = {
            "file": path.name,
            "provider_tag": self.provider_tag,
            "dimension": self.dim,
            "channels": list(CHANNELS),
            "count": len(self),
            "sha256": hashlib.sha256(blob).hexdigest(),
        }
        mpath = manifest_path(path)
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return mpath

    @classmethod
    def load(cls, path: str | os.PathLike) -> "VectorLibrary":
        return cls.from_bytes(Path(path).read_bytes())


def manifest_path(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def build_vector_library(records: Iterable[ExampleRecord], embedder: Embedder, batch_size: int = 64,
                         max_in_flight: int = 1, checkpoint: str | os.PathLike | None = None) -> VectorLibrary:
    """Embed every channel of every record.

    With ``checkpoint`` set, finished batches are saved as a partial library; a
    later call with the same records and embedder picks up where a provider
    failure stopped it.
    """
    records = list(records)
    done: list[np.ndarray] = []
    start = 0
    if checkpoint is not None and Path(checkpoint).exists():
        part = VectorLibrary.load(checkpoint)
        if part.provider_tag == embedder.tag and list(part.records) == records[:len(part)]:
            done = [part.vectors]
            start = len(part)
            log.info("resuming library build at record %d of %d", start, len(records))

    batches = [records[i:i + batch_size] for i in range(start, len(records), batch_size)]

    def embed_batch(batch: list[ExampleRecord]) -> np.ndarray:
        texts = [r.channel(c) for r in batch for c in CHANNELS]
        m = embedder.embed(texts)
        if m.shape != (len(texts), embedder.dim):
            raise DimensionMismatch(f"embedder returned shape {m.shape}, expected {(len(texts), embedder.dim)}")
        return m.reshape(len(batch), len(CHANNELS), embedder.dim)

    finished = start
    with ThreadPoolExecutor(max(1, max_in_flight)) as pool:
        # map keeps order, so checkpoints are always a prefix of the record list
        for batch, arr in zip(batches, pool.map(embed_batch, batches)):
            done.append(arr)
            finished += len(batch)
            if checkpoint is not None:
                VectorLibrary(records[:finished], np.concatenate(done), embedder.tag).save(checkpoint)
    vectors = np.concatenate(done) if done else np.zeros((0, len(CHANNELS), embedder.dim))
    return VectorLibrary(records, vectors, embedder.tag)


# -- scoring -------------------------------------------------------------------------------


def embed_query(embedder: Embedder, nlq: str, nosql: str | None = None, db_fields: str | None = None,
                result_fields: str | None = None) -> dict[str, np.ndarray]:
    """Embed the channels that are available; blank or missing ones are left out."""
    given = {"nlq": nlq, "nosql": nosql, "db_fields": db_fields, "result_fields": result_fields}
    names = [c for c in CHANNELS if given[c] and given[c].strip()]
    m = embedder.embed([given[c] for c in names])
    return {c: m[i] for i, c in enumerate(names)}


def similarity(query: Mapping[str, np.ndarray], record: Mapping[str, np.ndarray],
               weights: RetrievalWeights = RetrievalWeights()) -> float:
    total = 0.0
    for c in CHANNELS:
        q = query.get(c)
        if q is None:
            continue
        w = weights.w_nlq if c == "nlq" else weights.w_other
        total += w * float(np.dot(q, record[c]))
    return total


def _channel_scores(library: VectorLibrary, query: Mapping[str, np.ndarray]) -> np.ndarray:
    """Per-record cosine for each channel, zero where the query lacks the channel."""
    out = np.zeros((len(library), len(CHANNELS)))
    for j, c in enumerate(CHANNELS):
        q = query.get(c)
        if q is not None:
            if q.shape != (library.dim,):
                raise DimensionMismatch(f"query channel {c} has shape {q.shape}, library dimension is {library.dim}")
            out[:, j] = library.vectors[:, j, :] @ q
    return out


def rank(library: VectorLibrary, query: Mapping[str, np.ndarray],
         weights: RetrievalWeights = RetrievalWeights()) -> list[tuple[float, ExampleRecord]]:
    """All records, best first, with their Sim scores.

    Ordering uses Sim / w_nlq, which depends on the weights only through their
    ratio, so scaling both weights by the same factor cannot reorder anything.
    """
    cos = _channel_scores(library, query)
    ratio = weights.w_other / weights.w_nlq
    normed = cos[:, 0] + ratio * cos[:, 1:].sum(axis=1)
    order = sorted(range(len(library)), key=lambda i: (-normed[i], library.records[i].id))
    return [(float(weights.w_nlq * normed[i]), library.records[i]) for i in order]


def retrieve_top_k(library: VectorLibrary, query: Mapping[str, np.ndarray],
                   weights: RetrievalWeights = RetrievalWeights(), k: int = 20) -> list[ExampleRecord]:
    if k <= 0:
        return []
    if len(library) == 0:
        raise EmptyLibrary("cannot retrieve from an empty library")
    return [r for _, r in rank(library, query, weights)[:k]]
