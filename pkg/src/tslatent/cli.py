"""Operator command line: generate data, ingest CSVs, train models, build
indexes, query them, run evaluations, and serve the HTTP API.

Usage errors exit with code 2 (argparse); runtime failures print a single
``error: ...`` line and exit with code 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import manifest, synthgen
from .baselines import fit_pca, pca_embed
from .encoders import (
    Aligner,
    UnmatchableQueryError,
    combined_embedding,
    embed_text_query,
    train_aligner,
    train_autoencoder,
)
from .evalharness import (
    ExperimentArtifacts,
    ExperimentConfig,
    emit_report,
    run_experiment,
)
from .features import minmax_normalize
from .index import VectorIndex, load_index, save_index
from .ingest import WindowSpec, load_csv, window_series
from .neuralnet import TrainConfig
from .pipeline import (
    build_sketch_index,
    build_text_index,
    load_sketch_models,
    prepare_dataset,
)
from .series import Series, VolatilitySeries
from .service import ServiceConfig, serve


def _load_bank(spec: str) -> synthgen.PhraseBank:
    path = Path(spec)
    if path.is_dir():
        return synthgen.load_phrase_bank(path)
    return synthgen.builtin_phrase_bank(spec)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )


def cmd_gen(args) -> int:
    bank = _load_bank(args.phrase_bank)
    grid = synthgen.GRIDS[args.grid]()
    filter_config = synthgen.FilterConfig(relabel_volatility=args.relabel_volatility)
    samples = synthgen.make_dataset(
        args.n,
        grid=grid,
        bank=bank,
        filter_mode=args.filter,
        seed=args.seed,
        filter_config=filter_config,
    )
    source = {
        "kind": "synthetic",
        "filter_mode": args.filter,
        "grid": args.grid,
        "seed": args.seed,
    }
    doc = manifest.from_samples(args.name, samples, source=source)
    manifest.save_manifest(doc, args.out)
    print(f"wrote {len(doc)} samples to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    spec = WindowSpec(window_length=args.window, stride=args.stride)
    windows = []
    for csv_path in args.csv:
        table = load_csv(csv_path)
        windows.extend(window_series(table, spec))
    source = {
        "kind": "csv",
        "files": [str(p) for p in args.csv],
        "window_length": args.window,
        "stride": args.stride,
    }
    doc = manifest.from_windows(args.name, windows, source=source)
    manifest.save_manifest(doc, args.out)
    print(f"wrote {len(doc)} windows to {args.out}")
    return 0


def _load_training_matrix(args, target: str) -> np.ndarray:
    doc = manifest.load_manifest(args.dataset)
    exclude: set[str] = set()
    if args.exclude_ids:
        exclude = set(json.loads(Path(args.exclude_ids).read_text(encoding="utf-8")))
    prepared = prepare_dataset(doc)
    keep = [i for i, sid in enumerate(prepared.ids) if sid not in exclude]
    if not keep:
        raise ValueError("no training rows left after exclusions")
    matrix = prepared.trend_matrix if target == "trend" else prepared.vol_matrix
    return matrix[keep]


def cmd_train_ae(args) -> int:
    data = _load_training_matrix(args, args.target)
    model, history = train_autoencoder(data, _train_config(args))
    model.save(
        args.out,
        sidecar={
            "target": args.target,
            "epochs": args.epochs,
            "learning_rate": args.lr,
            "seed": args.seed,
            "final_train_mse": history.final,
            "final_val_mse": history.val_mse[-1],
        },
    )
    print(
        f"trained {args.target} autoencoder: train MSE {history.initial:.5f} -> "
        f"{history.final:.5f} ({args.epochs} epochs), saved to {args.out}"
    )
    return 0


def cmd_train_align(args) -> int:
    doc = manifest.load_manifest(args.dataset)
    models = load_sketch_models(args.ae_trend, args.ae_vol)
    prepared = prepare_dataset(doc)
    pairs = []
    for sid, s in zip(prepared.ids, prepared.normalized):
        caption = prepared.records[sid]["caption"]
        if caption is None:
            raise ValueError(f"series {sid!r} has no caption")
        pairs.append((caption, s))
    result = train_aligner(
        pairs, models, _train_config(args), clause_pair_fraction=args.clause_pairs
    )
    result.aligner.save(args.out, sidecar={"seed": args.seed, "epochs": args.epochs})
    losses = ", ".join(f"tau={t}: {v:.4f}" for t, v in result.tau_losses.items())
    print(f"aligner trained (validation loss {losses}); chose tau={result.chosen_tau}")
    print(f"saved to {args.out}")
    return 0


def cmd_build_index(args) -> int:
    doc = manifest.load_manifest(args.dataset)
    models = load_sketch_models(args.ae_trend, args.ae_vol)
    prepared = prepare_dataset(doc)
    if args.mode == "sketch":
        index = build_sketch_index(prepared, models)
    else:
        if not args.aligner:
            raise ValueError("text mode requires --aligner")
        index = build_text_index(prepared, models, Aligner.load(args.aligner))
    save_index(index, args.out)
    print(f"built {args.mode} index with {len(index)} vectors at {args.out}")
    return 0


def _format_results(entries: list[tuple[str, float]], records: dict) -> str:
    lines = []
    for rank, (sid, score) in enumerate(entries, start=1):
        caption = records.get(sid, {}).get("caption")
        suffix = f"  {caption}" if caption else ""
        lines.append(f"{rank:2d}. {sid}  score={score:.6f}{suffix}")
    return "\n".join(lines)


def cmd_query(args) -> int:
    index = load_index(args.index)
    models = load_sketch_models(args.ae_trend, args.ae_vol)
    records: dict = {}
    if args.dataset:
        records = prepare_dataset(manifest.load_manifest(args.dataset)).records

    if args.sketch_file:
        raw = json.loads(Path(args.sketch_file).read_text(encoding="utf-8"))
        points = raw["points"] if isinstance(raw, dict) else raw
        values = np.interp(
            np.linspace(0, len(points) - 1, models.trend_ae.input_dim),
            np.arange(len(points)),
            np.asarray(points, dtype=np.float64),
        )
        sketch = minmax_normalize(Series(id="sketch", values=values))
        embedding = combined_embedding(models, sketch)
    else:
        aligner = Aligner.load(args.aligner)
        embedding = embed_text_query(aligner, args.text)

    result = index.query(embedding, args.k)
    payload = {
        "k": args.k,
        "results": [
            {"id": sid, "score": score, "caption": records.get(sid, {}).get("caption")}
            for sid, score in result.entries
        ],
    }
    print(_format_results(result.entries, records))
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    spec = json.loads(Path(args.config).read_text(encoding="utf-8"))
    doc = manifest.load_manifest(spec["dataset"])
    prepared = prepare_dataset(doc)
    db = prepared.raw_database()
    methods = tuple(spec.get("methods", ["bf", "bf_avg", "pca16", "ae"]))

    artifacts_kwargs: dict = {"raw_db": db}
    if "pca16" in methods:
        pca = fit_pca(db)
        items = []
        for i, sid in enumerate(prepared.ids):
            emb = pca_embed(
                pca,
                Series(id=sid, values=db.trend[i], normalized=True),
                VolatilitySeries(source_id=sid, values=db.vol[i]),
            )
            items.append((sid, emb, None))
        artifacts_kwargs["pca_model"] = pca
        artifacts_kwargs["pca_index"] = VectorIndex.build(2 * pca.n_components, items)
    if "ae" in methods:
        models = load_sketch_models(spec["trend_ae"], spec["vol_ae"])
        artifacts_kwargs["sketch_models"] = models
        artifacts_kwargs["ae_index"] = build_sketch_index(prepared, models)
    artifacts = ExperimentArtifacts(**artifacts_kwargs)

    pool = prepared.normalized
    if "test_ids" in spec:
        wanted = set(json.loads(Path(spec["test_ids"]).read_text(encoding="utf-8")))
        pool = [s for s in pool if s.id in wanted]

    out_dir = Path(spec.get("out_dir", "reports"))
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, row in enumerate(spec["rows"]):
        config = ExperimentConfig(
            noise_sigma=row["noise"],
            shift_steps=row["shift"],
            k=row["k"],
            query_count=spec.get("query_count", 302),
            seed=spec.get("seed", 0),
            methods=methods,
        )
        report = run_experiment(
            config, artifacts, pool, records_path=out_dir / f"row_{i}.records.jsonl"
        )
        for fmt, suffix in (("json", "json"), ("csv", "csv"), ("markdown", "md")):
            emit_report(report, fmt, out_dir / f"row_{i}.{suffix}")
        summary = ", ".join(
            f"{m.method}: ts-corr={m.trend_corr:.3f} vol-mape={m.vol_mape:.3f}"
            for m in report.methods
        )
        print(f"row {i} (noise={row['noise']}, shift={row['shift']}, k={row['k']}): {summary}")
    print(f"reports written to {out_dir}")
    return 0


def cmd_serve(args) -> int:
    config = ServiceConfig.load(args.config)
    serve(config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tslatent",
        description="Latent-space storage and multi-modal retrieval for "
        "financial time series",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic captioned dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--filter", choices=("unfiltered", "filtered"), default="filtered")
    p.add_argument("--phrase-bank", default="default", help="builtin bank name or directory")
    p.add_argument("--grid", choices=sorted(synthgen.GRIDS), default="default")
    p.add_argument("--relabel-volatility", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ingest", help="window historical CSV files into a dataset")
    p.add_argument("--csv", nargs="+", required=True)
    p.add_argument("--window", type=int, default=30)
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--name", default="historical")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-ae", help="train the trend or volatility autoencoder")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target", choices=("trend", "vol"), required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exclude-ids", help="JSON file listing series ids to hold out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_ae)

    p = sub.add_parser("train-align", help="train the text/series aligner heads")
    p.add_argument("--dataset", required=True)
    p.add_argument("--ae-trend", required=True)
    p.add_argument("--ae-vol", required=True)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--clause-pairs",
        type=float,
        default=0.5,
        help="rate of extra (single clause, series) training pairs",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_align)

    p = sub.add_parser("build-index", help="embed a dataset and persist the index")
    p.add_argument("--dataset", required=True)
    p.add_argument("--ae-trend", required=True)
    p.add_argument("--ae-vol", required=True)
    p.add_argument("--aligner")
    p.add_argument("--mode", choices=("sketch", "text"), default="sketch")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("query", help="query a persisted index")
    p.add_argument("--index", required=True)
    p.add_argument("--ae-trend", required=True)
    p.add_argument("--ae-vol", required=True)
    p.add_argument("--aligner")
    p.add_argument("--dataset", help="manifest for captions in the output")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--sketch-file", help="JSON array of points or {points: [...]}")
    group.add_argument("--text")
    p.add_argument("--k", type=int, default=9)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="run the retrieval benchmark grid")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP query service")
    p.add_argument("--config")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "query" and args.text and not args.aligner:
        parser.error("--text requires --aligner")
    try:
        return args.func(args)
    except UnmatchableQueryError as err:
        print(f"error: unmatchable query, unknown tokens: {', '.join(err.unknown_tokens)}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
