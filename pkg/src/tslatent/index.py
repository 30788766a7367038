"""Exact flat vector index: top-k cosine retrieval over unit vectors plus a
checksummed binary on-disk format.

The index is immutable once built; rebuilds produce a fresh instance that
callers swap in atomically.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

UNIT_NORM_TOLERANCE = 1e-6

_MAGIC = b"TSLX"
_VERSION = 1


class IndexBuildError(ValueError):
    pass


class IndexQueryError(ValueError):
    pass


class IndexLoadError(ValueError):
    pass


@dataclass
class QueryResult:
    """Ranked (id, score) pairs. ``ordering`` records whether scores are
    similarities (descending) or distances (ascending)."""

    entries: list[tuple[str, float]]
    k_requested: int
    ordering: str = "similarity"

    def __post_init__(self) -> None:
        if self.ordering not in ("similarity", "distance"):
            raise ValueError(f"unknown ordering {self.ordering!r}")

    @property
    def k_returned(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [sid for sid, _ in self.entries]

    def scores(self) -> list[float]:
        return [score for _, score in self.entries]


def rank_top_k(
    scores: np.ndarray, ids: list[str], k: int, descending: bool
) -> list[tuple[str, float]]:
    """Exact top-k with deterministic ascending-id tie-breaking."""
    n = scores.size
    k = min(k, n)
    if k == 0:
        return []
    keys = -scores if descending else scores
    if k < n:
        candidate_idx = np.argpartition(keys, k - 1)[:k]
        # pull in every index tied with the k-th best so id order decides
        threshold = keys[candidate_idx].max()
        candidate_idx = np.flatnonzero(keys <= threshold)
    else:
        candidate_idx = np.arange(n)
    cand_ids = np.asarray([ids[i] for i in candidate_idx])
    order = np.lexsort((cand_ids, keys[candidate_idx]))[:k]
    chosen = candidate_idx[order]
    return [(ids[i], float(scores[i])) for i in chosen]


class VectorIndex:
    """Flat store of (id, unit embedding) with optional payloads."""

    def __init__(self, dim: int):
        if dim < 1:
            raise IndexBuildError("dimension must be positive")
        self.dim = int(dim)
        self.ids: list[str] = []
        self.matrix = np.empty((0, dim), dtype=np.float64)
        self.payloads: dict[str, dict] = {}
        self._id_set: set[str] = set()

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def build(
        cls, dim: int, items: list[tuple[str, np.ndarray, dict | None]]
    ) -> "VectorIndex":
        index = cls(dim)
        if not items:
            return index
        vectors = []
        for sid, vector, payload in items:
            vector = np.asarray(vector, dtype=np.float64)
            if vector.shape != (dim,):
                raise IndexBuildError(
                    f"id {sid!r}: vector shape {vector.shape} != ({dim},)"
                )
            norm = float(np.linalg.norm(vector))
            if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
                raise IndexBuildError(
                    f"id {sid!r}: vector norm {norm:.9f} not unit within "
                    f"{UNIT_NORM_TOLERANCE}"
                )
            if sid in index._id_set:
                raise IndexBuildError(f"duplicate id {sid!r}")
            index._id_set.add(sid)
            index.ids.append(sid)
            vectors.append(vector)
            if payload is not None:
                index.payloads[sid] = payload
        index.matrix = np.vstack(vectors)
        return index

    def query(self, q: np.ndarray, k: int) -> QueryResult:
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise IndexQueryError(f"query shape {q.shape} != ({self.dim},)")
        if k < 1:
            raise IndexQueryError("k must be at least 1")
        if not self.ids:
            return QueryResult(entries=[], k_requested=k)
        scores = self.matrix @ q
        entries = rank_top_k(scores, self.ids, k, descending=True)
        return QueryResult(entries=entries, k_requested=k)

    def payload(self, sid: str) -> dict | None:
        return self.payloads.get(sid)

    def vector(self, sid: str) -> np.ndarray:
        return self.matrix[self.ids.index(sid)]


def save_index(index: VectorIndex, path: str | Path) -> None:
    """Binary layout: magic, u32 version, u32 dim, u64 count, float32 rows
    (little-endian), length-prefixed UTF-8 ids, u64 checksum. Payloads stay
    in the dataset manifest and are re-attached by id."""
    body = bytearray(
        struct.pack("<4sIIQ", _MAGIC, _VERSION, index.dim, len(index.ids))
    )
    body += np.ascontiguousarray(index.matrix, dtype="<f4").tobytes()
    for sid in index.ids:
        encoded = sid.encode("utf-8")
        body += struct.pack("<I", len(encoded))
        body += encoded
    body += struct.pack("<Q", zlib.crc32(bytes(body)))
    Path(path).write_bytes(bytes(body))


def load_index(path: str | Path) -> VectorIndex:
    path = Path(path)
    if not path.is_file():
        raise IndexLoadError(f"no such index file: {path}")
    raw = path.read_bytes()
    header_size = struct.calcsize("<4sIIQ")
    if len(raw) < header_size + 8:
        raise IndexLoadError(f"{path}: truncated index file")
    payload, (stored,) = raw[:-8], struct.unpack("<Q", raw[-8:])
    if zlib.crc32(payload) != stored:
        raise IndexLoadError(f"{path}: checksum mismatch (corrupt or truncated)")
    magic, version, dim, count = struct.unpack_from("<4sIIQ", payload, 0)
    if magic != _MAGIC:
        raise IndexLoadError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise IndexLoadError(f"{path}: unsupported version {version}")
    offset = header_size
    matrix_bytes = 4 * dim * count
    if len(payload) < offset + matrix_bytes:
        raise IndexLoadError(f"{path}: vector block truncated")
    matrix = (
        np.frombuffer(payload, dtype="<f4", count=dim * count, offset=offset)
        .reshape(count, dim)
        .astype(np.float64)
    )
    offset += matrix_bytes
    ids = []
    for _ in range(count):
        if len(payload) < offset + 4:
            raise IndexLoadError(f"{path}: id block truncated")
        (id_len,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        ids.append(payload[offset : offset + id_len].decode("utf-8"))
        offset += id_len
    if offset != len(payload):
        raise IndexLoadError(f"{path}: trailing bytes after id block")
    if len(set(ids)) != len(ids):
        raise IndexLoadError(f"{path}: duplicate ids")

    index = VectorIndex(dim)
    index.ids = ids
    index._id_set = set(ids)
    index.matrix = matrix
    return index
