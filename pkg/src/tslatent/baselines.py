"""Reference retrieval methods: brute-force Euclidean search over raw
series, the averaged dual-space variant, and a PCA latent baseline of the
same dimensionality as the learned embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .index import QueryResult, rank_top_k
from .series import Series, VolatilitySeries


@dataclass
class RawDatabase:
    """Normalized series and their volatility series, stacked row-wise."""

    ids: list[str]
    trend: np.ndarray
    vol: np.ndarray

    def __post_init__(self) -> None:
        self.trend = np.asarray(self.trend, dtype=np.float64)
        self.vol = np.asarray(self.vol, dtype=np.float64)
        if self.trend.shape != self.vol.shape:
            raise ValueError("trend and volatility matrices must align")
        if self.trend.shape[0] != len(self.ids):
            raise ValueError("row count must match id count")

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_pairs(
        cls, items: list[tuple[str, Series, VolatilitySeries]]
    ) -> "RawDatabase":
        ids = [sid for sid, _, _ in items]
        trend = np.vstack([s.values for _, s, _ in items])
        vol = np.vstack([v.values for _, _, v in items])
        return cls(ids=ids, trend=trend, vol=vol)


def _check_query(db_matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (db_matrix.shape[1],):
        raise ValueError(
            f"query length {query.shape} does not match database width "
            f"{db_matrix.shape[1]}"
        )
    return query


def bf_search(db: RawDatabase, query: Series, k: int) -> QueryResult:
    """Top-k by Euclidean distance on the raw series, ignoring volatility."""
    q = _check_query(db.trend, query.values)
    distances = np.linalg.norm(db.trend - q, axis=1)
    entries = rank_top_k(distances, db.ids, k, descending=False)
    return QueryResult(entries=entries, k_requested=k, ordering="distance")


def bf_avg_search(
    db: RawDatabase, query: Series, query_vol: VolatilitySeries, k: int
) -> QueryResult:
    """Top-k by the average of the series and volatility-series distances."""
    q = _check_query(db.trend, query.values)
    qv = _check_query(db.vol, query_vol.values)
    distances = 0.5 * (
        np.linalg.norm(db.trend - q, axis=1) + np.linalg.norm(db.vol - qv, axis=1)
    )
    entries = rank_top_k(distances, db.ids, k, descending=False)
    return QueryResult(entries=entries, k_requested=k, ordering="distance")


@dataclass
class PcaChannel:
    mean: np.ndarray
    axes: np.ndarray  # (n_components, dim), rows orthonormal
    explained_variance: np.ndarray  # eigenvalues, descending

    def project(self, x: np.ndarray) -> np.ndarray:
        return self.axes @ (np.asarray(x, dtype=np.float64) - self.mean)


@dataclass
class PcaModel:
    """Per-channel principal axes; embedding mirrors the learned combined
    embedding (per-part normalization, concatenation, 1/sqrt(2) scaling)."""

    trend: PcaChannel
    vol: PcaChannel
    n_components: int


def _fit_channel(matrix: np.ndarray, n_components: int) -> PcaChannel:
    mean = matrix.mean(axis=0)
    centered = matrix - mean
    cov = centered.T @ centered / (matrix.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:n_components]
    axes = eigvecs[:, order].T.copy()
    # sign convention: make the largest-magnitude component of each axis positive
    for row in axes:
        peak = np.argmax(np.abs(row))
        if row[peak] < 0:
            row *= -1.0
    return PcaChannel(
        mean=mean, axes=axes, explained_variance=eigvals[order].copy()
    )


def fit_pca(db: RawDatabase, n_components: int = 16) -> PcaModel:
    if len(db) < n_components + 1:
        raise ValueError(
            f"need at least {n_components + 1} rows to fit {n_components} "
            f"components, got {len(db)}"
        )
    return PcaModel(
        trend=_fit_channel(db.trend, n_components),
        vol=_fit_channel(db.vol, n_components),
        n_components=n_components,
    )


def _normalize_or_canonical(x: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        out = np.zeros_like(x)
        out[0] = 1.0
        return out
    return x / norm


def pca_embed(
    model: PcaModel, series: Series, vol: VolatilitySeries
) -> np.ndarray:
    """Project both channels, normalize each part, concatenate and rescale
    to a unit vector."""
    t_part = _normalize_or_canonical(model.trend.project(series.values))
    v_part = _normalize_or_canonical(model.vol.project(vol.values))
    return np.concatenate([t_part, v_part]) / np.sqrt(2.0)
