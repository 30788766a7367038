"""Glue between persisted artifacts (manifests, checkpoints, index files)
and the in-memory structures the query paths need."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import RawDatabase
from .encoders import (
    Aligner,
    AutoencoderModel,
    SketchEncoders,
    combined_embedding_batch,
    embed_series_for_text_batch,
)
from .features import VolConfig, minmax_normalize, volatility_series
from .index import VectorIndex
from .manifest import Manifest, load_manifest
from .series import Series


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


@dataclass
class PreparedDataset:
    """Manifest contents normalized once: stacked series and volatility
    matrices plus per-id payload records."""

    name: str
    ids: list[str]
    normalized: list[Series]
    trend_matrix: np.ndarray
    vol_matrix: np.ndarray
    records: dict[str, dict] = field(repr=False, default_factory=dict)

    def raw_database(self) -> RawDatabase:
        return RawDatabase(
            ids=list(self.ids), trend=self.trend_matrix, vol=self.vol_matrix
        )


def prepare_dataset(
    manifest: Manifest, vol_config: VolConfig = VolConfig()
) -> PreparedDataset:
    ids, normalized, trend_rows, vol_rows = [], [], [], []
    records: dict[str, dict] = {}
    for entry in manifest.entries:
        s = minmax_normalize(entry.series)
        v = volatility_series(s, vol_config)
        ids.append(s.id)
        normalized.append(s)
        trend_rows.append(s.values)
        vol_rows.append(v.values)
        records[s.id] = {
            "id": s.id,
            "values": entry.series.values.tolist(),
            "series": s.values.tolist(),
            "vol_series": v.values.tolist(),
            "labels": entry.labels.as_dict() if entry.labels else None,
            "caption": entry.caption,
        }
    return PreparedDataset(
        name=manifest.name,
        ids=ids,
        normalized=normalized,
        trend_matrix=np.vstack(trend_rows),
        vol_matrix=np.vstack(vol_rows),
        records=records,
    )


def build_sketch_index(
    prepared: PreparedDataset, models: SketchEncoders
) -> VectorIndex:
    embeddings = combined_embedding_batch(
        models, prepared.trend_matrix, prepared.vol_matrix
    )
    items = [(sid, embeddings[i], None) for i, sid in enumerate(prepared.ids)]
    return VectorIndex.build(models.embedding_dim, items)


def build_text_index(
    prepared: PreparedDataset, models: SketchEncoders, aligner: Aligner
) -> VectorIndex:
    combined = combined_embedding_batch(
        models, prepared.trend_matrix, prepared.vol_matrix
    )
    embeddings = embed_series_for_text_batch(aligner, combined)
    items = [(sid, embeddings[i], None) for i, sid in enumerate(prepared.ids)]
    return VectorIndex.build(aligner.shared_dim, items)


def load_sketch_models(
    trend_ae_path: str | Path, vol_ae_path: str | Path, vol_config: VolConfig = VolConfig()
) -> SketchEncoders:
    trend_ae, _ = AutoencoderModel.load(trend_ae_path)
    vol_ae, _ = AutoencoderModel.load(vol_ae_path)
    return SketchEncoders(trend_ae=trend_ae, vol_ae=vol_ae, vol_config=vol_config)


@dataclass
class Engine:
    """One immutable generation of query state; rebuilds swap the whole
    object."""

    dataset_name: str
    sketch_models: SketchEncoders
    sketch_index: VectorIndex
    records: dict[str, dict] = field(repr=False)
    aligner: Aligner | None = None
    text_index: VectorIndex | None = None
    checksums: dict[str, str] = field(default_factory=dict)
    generation: int = 0


def build_engine(
    dataset_path: str | Path,
    trend_ae_path: str | Path,
    vol_ae_path: str | Path,
    aligner_path: str | Path | None = None,
    vol_config: VolConfig = VolConfig(),
    generation: int = 0,
) -> Engine:
    manifest = load_manifest(dataset_path)
    models = load_sketch_models(trend_ae_path, vol_ae_path, vol_config)
    prepared = prepare_dataset(manifest, vol_config)
    sketch_index = build_sketch_index(prepared, models)
    checksums = {
        "trend_ae": file_digest(str(trend_ae_path) + ".enc"),
        "vol_ae": file_digest(str(vol_ae_path) + ".enc"),
    }
    aligner = None
    text_index = None
    if aligner_path is not None:
        aligner = Aligner.load(aligner_path)
        text_index = build_text_index(prepared, models, aligner)
        checksums["aligner"] = file_digest(str(aligner_path) + ".text")
    return Engine(
        dataset_name=prepared.name,
        sketch_models=models,
        sketch_index=sketch_index,
        records=prepared.records,
        aligner=aligner,
        text_index=text_index,
        checksums=checksums,
        generation=generation,
    )
