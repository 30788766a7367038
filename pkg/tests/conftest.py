"""Shared fixtures: a small end-to-end artifact directory (dataset,
checkpoints, indexes) reused by the service and CLI tests."""

import numpy as np
import pytest

from tslatent import manifest, synthgen
from tslatent.encoders import train_aligner, train_autoencoder
from tslatent.index import save_index
from tslatent.neuralnet import TrainConfig
from tslatent.pipeline import (
    build_sketch_index,
    build_text_index,
    load_sketch_models,
    prepare_dataset,
)


@pytest.fixture(scope="session")
def artifact_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("artifacts")
    samples = synthgen.make_dataset(64, seed=9)
    doc = manifest.from_samples("fixture-synthetic", samples, source={"kind": "synthetic"})
    dataset_path = root / "dataset.json"
    manifest.save_manifest(doc, dataset_path)

    prepared = prepare_dataset(doc)
    config = TrainConfig(epochs=60, batch_size=32, seed=0)
    trend_ae, _ = train_autoencoder(prepared.trend_matrix, config, hidden=(64, 32))
    vol_ae, _ = train_autoencoder(
        np.clip(prepared.vol_matrix, 0.0, 1.0), config, hidden=(64, 32)
    )
    trend_path, vol_path = root / "trend", root / "vol"
    trend_ae.save(trend_path, sidecar={"target": "trend"})
    vol_ae.save(vol_path, sidecar={"target": "vol"})

    models = load_sketch_models(trend_path, vol_path)
    pairs = [
        (prepared.records[sid]["caption"], s)
        for sid, s in zip(prepared.ids, prepared.normalized)
    ]
    result = train_aligner(
        pairs, models, TrainConfig(epochs=50, batch_size=32, seed=1), tau_grid=(0.1, 0.5)
    )
    aligner_path = root / "aligner"
    result.aligner.save(aligner_path)

    sketch_index = build_sketch_index(prepared, models)
    text_index = build_text_index(prepared, models, result.aligner)
    save_index(sketch_index, root / "sketch.tslx")
    save_index(text_index, root / "text.tslx")

    return {
        "root": root,
        "dataset": dataset_path,
        "trend_ae": trend_path,
        "vol_ae": vol_path,
        "aligner": aligner_path,
        "sketch_index": root / "sketch.tslx",
        "text_index": root / "text.tslx",
        "manifest": doc,
        "prepared": prepared,
    }
