"""Embedding index: offline build, exact top-k cosine search, persistence.

The index is an embedded exact scanner rather than an external vector
database: at k=1 over the corpus sizes this system targets, a dot-product
scan is well inside the latency budget and keeps retrieval semantics exact.
The index is immutable after build, so any number of searches may run
concurrently.

Stored vectors are L2-normalized, which makes cosine similarity equal to a
dot product.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np
import requests

from .curation import Passage

DIM = 768

MAGIC = b"SATH"
FORMAT_VERSION = 1


class DuplicateId(Exception):
    pass


class EmbedderError(Exception):
    pass


class DimensionMismatch(Exception):
    pass


class IoError(Exception):
    pass


class FormatError(Exception):
    """Bad magic, bad version, or truncated/inconsistent structure."""


class ChecksumError(Exception):
    """Payload bytes do not match the trailing checksum."""


class NoContext:
    """Marker: retrieval found nothing above the score floor."""

    def __repr__(self) -> str:  # pragma: no cover
        return "NoContext"

    def __eq__(self, other) -> bool:
        return isinstance(other, NoContext)

    def __hash__(self) -> int:
        return hash("NoContext")


NO_CONTEXT = NoContext()


@dataclass(frozen=True)
class RetrievalResult:
    passage_id: str
    score: float
    text: str


class Embedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...
    def dim(self) -> int: ...


class HashingEmbedder:
    """Deterministic stub embedder: signed character-3-gram feature hashing.

    Buckets and signs come from blake2b digests, accumulation runs in input
    order in float64, and the result is L2-normalized float32 — bitwise
    reproducible across runs and platforms. Texts sharing character 3-grams
    land closer in cosine, which is similarity-preserving enough for tests.
    """

    def __init__(self, dim: int = DIM):
        self._dim = dim

    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self._dim, dtype=np.float64)
        grams = (
            [text[i : i + 3] for i in range(len(text) - 2)] if len(text) >= 3 else [text]
        )
        for gram in grams:
            digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
            h = int.from_bytes(digest, "little")
            bucket = h % self._dim
            sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
            vec[bucket] += sign
        norm = float(np.sqrt(np.dot(vec, vec)))
        if norm > 0.0:
            vec /= norm
        return vec.astype(np.float32)


class HttpEmbedder:
    """Embedding backend over HTTP: request {texts: [...]}, response {vectors: [...]}."""

    def __init__(self, endpoint: str, dim: int = DIM, timeout_s: float = 30.0):
        self.endpoint = endpoint
        self._dim = dim
        self.timeout_s = timeout_s

    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> np.ndarray:
        try:
            resp = requests.post(
                self.endpoint, json={"texts": [text]}, timeout=self.timeout_s
            )
            resp.raise_for_status()
            vectors = resp.json()["vectors"]
            vec = np.asarray(vectors[0], dtype=np.float32)
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise EmbedderError(f"embedding request failed: {exc}") from exc
        if vec.shape != (self._dim,):
            raise EmbedderError(
                f"backend returned shape {vec.shape}, expected ({self._dim},)"
            )
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec = vec / norm
        return vec


@dataclass(frozen=True)
class IndexedPassage:
    passage_id: str
    vector: np.ndarray
    text: str
    meta: dict[str, str] = field(default_factory=dict)


class VectorIndex:
    """Immutable collection of embedded passages with a dense score matrix."""

    def __init__(
        self,
        ids: list[str],
        texts: list[str],
        metas: list[dict[str, str]],
        matrix: np.ndarray,
        version: int = FORMAT_VERSION,
    ):
        if matrix.ndim != 2 or (len(ids) and matrix.shape[1] != DIM):
            raise DimensionMismatch(f"expected ({len(ids)}, {DIM}) matrix, got {matrix.shape}")
        if not (len(ids) == len(texts) == len(metas) == matrix.shape[0]):
            raise ValueError("ids/texts/metas/matrix lengths disagree")
        self.ids = list(ids)
        self.texts = list(texts)
        self.metas = [dict(m) for m in metas]
        self.matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        self.version = version
        self._matrix64: np.ndarray | None = None

    def scoring_matrix(self) -> np.ndarray:
        # float64 scoring keeps orderings stable against exact recomputation
        if self._matrix64 is None:
            self._matrix64 = self.matrix.astype(np.float64)
        return self._matrix64

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return DIM

    def entries(self) -> Iterable[IndexedPassage]:
        for i, pid in enumerate(self.ids):
            yield IndexedPassage(pid, self.matrix[i], self.texts[i], self.metas[i])


def build_index(
    passages: Iterable[Passage], embedder: Embedder, metas: dict[str, dict[str, str]] | None = None
) -> VectorIndex:
    """Embed passages in input order into a searchable index.

    Raises DuplicateId on a repeated passage id and EmbedderError (tagged
    with the passage id) when the embedder fails.
    """
    if embedder.dim() != DIM:
        raise DimensionMismatch(f"embedder dim {embedder.dim()} != {DIM}")
    ids: list[str] = []
    texts: list[str] = []
    meta_rows: list[dict[str, str]] = []
    vectors: list[np.ndarray] = []
    seen: set[str] = set()
    for passage in passages:
        if passage.id in seen:
            raise DuplicateId(f"duplicate passage id {passage.id!r}")
        seen.add(passage.id)
        try:
            vec = embedder.embed(passage.text)
        except EmbedderError:
            raise
        except Exception as exc:
            raise EmbedderError(f"embedding failed for passage {passage.id!r}: {exc}") from exc
        if vec.shape != (DIM,):
            raise DimensionMismatch(
                f"embedder returned shape {vec.shape} for passage {passage.id!r}"
            )
        ids.append(passage.id)
        texts.append(passage.text)
        meta_rows.append(dict((metas or {}).get(passage.id, {})))
        vectors.append(np.asarray(vec, dtype=np.float32))
    matrix = (
        np.vstack(vectors) if vectors else np.zeros((0, DIM), dtype=np.float32)
    )
    return VectorIndex(ids, texts, meta_rows, matrix)


def search(index: VectorIndex, query: np.ndarray, k: int) -> list[RetrievalResult]:
    """Exact top-k by cosine similarity; ties break by passage_id ascending."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query, dtype=np.float32)
    if query.shape != (DIM,):
        raise DimensionMismatch(f"query shape {query.shape}, expected ({DIM},)")
    n = len(index)
    if n == 0:
        return []
    scores = index.scoring_matrix() @ query.astype(np.float64)
    k_eff = min(k, n)
    # Candidate cut at the k-th score keeps every potential tie, then the
    # exact (-score, id) sort decides.
    if k_eff < n:
        kth = np.partition(scores, n - k_eff)[n - k_eff]
        candidates = np.nonzero(scores >= kth)[0]
    else:
        candidates = np.arange(n)
    ranked = sorted(candidates, key=lambda i: (-float(scores[i]), index.ids[i]))[:k_eff]
    return [
        RetrievalResult(passage_id=index.ids[i], score=float(scores[i]), text=index.texts[i])
        for i in ranked
    ]


def retrieve_context(
    index: VectorIndex,
    enriched_query: str,
    embedder: Embedder,
    k: int = 1,
    score_floor: float = 0.25,
) -> RetrievalResult | NoContext:
    """Top-1 grounding passage, or NO_CONTEXT when below the score floor."""
    if not enriched_query:
        raise ValueError("enriched_query must be nonempty")
    results = search(index, embedder.embed(enriched_query), k)
    if not results or results[0].score < score_floor:
        return NO_CONTEXT
    return results[0]


# ---------------------------------------------------------------------------
# Persistence
#
# Layout (little-endian): magic "SATH" | u16 version | u16 dim | u64 count |
# per entry: u32 id_len + id | u32 text_len + text | u16 meta_count +
# (u16 key_len + key + u32 val_len + val)* | dim float32 values |
# trailing u64 checksum (blake2b-8) of all preceding bytes.
# ---------------------------------------------------------------------------

def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def save_index(index: VectorIndex, path: str | Path) -> None:
    chunks: list[bytes] = [MAGIC, struct.pack("<HHQ", FORMAT_VERSION, DIM, len(index))]
    for i, pid in enumerate(index.ids):
        id_b = pid.encode("utf-8")
        text_b = index.texts[i].encode("utf-8")
        chunks.append(struct.pack("<I", len(id_b)))
        chunks.append(id_b)
        chunks.append(struct.pack("<I", len(text_b)))
        chunks.append(text_b)
        meta = index.metas[i]
        chunks.append(struct.pack("<H", len(meta)))
        for key, value in meta.items():
            key_b = key.encode("utf-8")
            val_b = value.encode("utf-8")
            chunks.append(struct.pack("<H", len(key_b)))
            chunks.append(key_b)
            chunks.append(struct.pack("<I", len(val_b)))
            chunks.append(val_b)
        chunks.append(index.matrix[i].astype("<f4").tobytes())
    payload = b"".join(chunks)
    blob = payload + struct.pack("<Q", _checksum(payload))
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoError(f"cannot write index to {path}: {exc}") from exc


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.blob):
            raise FormatError(
                f"truncated index file: wanted {n} bytes at offset {self.pos}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def utf8(self, n: int) -> str:
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 at offset {self.pos}: {exc}") from exc


def load_index(path: str | Path) -> VectorIndex:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read index from {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 12 + 8:
        raise FormatError("file too short to be an index")
    payload, checksum_bytes = blob[:-8], blob[-8:]
    reader = _Reader(payload)
    magic = reader.take(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    version = reader.u16()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    dim = reader.u16()
    if dim != DIM:
        raise FormatError(f"unsupported dimension {dim}")
    count = reader.u64()
    ids: list[str] = []
    texts: list[str] = []
    metas: list[dict[str, str]] = []
    rows: list[np.ndarray] = []
    for _ in range(count):
        ids.append(reader.utf8(reader.u32()))
        texts.append(reader.utf8(reader.u32()))
        meta: dict[str, str] = {}
        for _ in range(reader.u16()):
            key = reader.utf8(reader.u16())
            meta[key] = reader.utf8(reader.u32())
        metas.append(meta)
        rows.append(np.frombuffer(reader.take(dim * 4), dtype="<f4"))
    if reader.pos != len(payload):
        raise FormatError(f"{len(payload) - reader.pos} trailing bytes after entries")
    expected = struct.unpack("<Q", checksum_bytes)[0]
    if _checksum(payload) != expected:
        raise ChecksumError("index checksum mismatch")
    matrix = np.vstack(rows) if rows else np.zeros((0, DIM), dtype=np.float32)
    return VectorIndex(ids, texts, metas, matrix, version=version)
