"""Dataset manifest: the JSON interchange format for labelled series.

Both the synthetic generator and the CSV ingestion path emit the same
manifest shape, so downstream stages (training, indexing, serving) are
agnostic to where the data came from.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .series import RegimeLabels, Series
from .synthgen import DatasetSample

FORMAT_NAME = "tslatent-dataset"
FORMAT_VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass
class ManifestEntry:
    series: Series
    labels: RegimeLabels | None = None
    caption: str | None = None


@dataclass
class Manifest:
    name: str
    entries: list[ManifestEntry]
    source: dict | None = None

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for entry in self.entries:
            if entry.series.id in seen:
                raise ManifestError(f"duplicate series id {entry.series.id!r}")
            seen.add(entry.series.id)

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [entry.series.id for entry in self.entries]

    def get(self, series_id: str) -> ManifestEntry:
        for entry in self.entries:
            if entry.series.id == series_id:
                return entry
        raise KeyError(series_id)


def from_samples(name: str, samples: list[DatasetSample], source: dict | None = None) -> Manifest:
    entries = [
        ManifestEntry(series=s.series, labels=s.labels, caption=s.caption)
        for s in samples
    ]
    return Manifest(name=name, entries=entries, source=source)


def from_windows(name: str, windows: list[Series], source: dict | None = None) -> Manifest:
    entries = [ManifestEntry(series=w) for w in windows]
    return Manifest(name=name, entries=entries, source=source)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    """Serialize to JSON with a stable layout (same inputs, same bytes)."""
    doc: dict = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "name": manifest.name,
    }
    if manifest.source is not None:
        doc["source"] = manifest.source
    doc["samples"] = []
    for entry in manifest.entries:
        sample: dict = {"id": entry.series.id, "values": entry.series.values.tolist()}
        if entry.labels is not None:
            sample["labels"] = entry.labels.as_dict()
        if entry.caption is not None:
            sample["caption"] = entry.caption
        doc["samples"].append(sample)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"no such manifest: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    if doc.get("format") != FORMAT_NAME:
        raise ManifestError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise ManifestError(f"{path}: unsupported version {doc.get('version')!r}")
    entries = []
    for sample in doc.get("samples", []):
        labels = None
        if "labels" in sample:
            labels = RegimeLabels(**sample["labels"])
        entries.append(
            ManifestEntry(
                series=Series(id=sample["id"], values=np.asarray(sample["values"])),
                labels=labels,
                caption=sample.get("caption"),
            )
        )
    return Manifest(name=doc.get("name", path.stem), entries=entries, source=doc.get("source"))
