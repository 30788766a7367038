"""HTTP query service: sketch and text retrieval over the built indexes.

Queries are pure reads against an immutable engine generation; the admin
rebuild endpoint constructs a fresh generation and swaps it in atomically,
so in-flight queries finish on the state they started with.
"""

from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .encoders import UnmatchableQueryError, combined_embedding, embed_text_query
from .features import minmax_normalize
from .pipeline import Engine, build_engine
from .series import Series

MAX_SKETCH_POINTS = 4096


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8099
    dataset_path: str | None = None
    trend_ae_path: str | None = None
    vol_ae_path: str | None = None
    aligner_path: str | None = None
    admin_token: str | None = None
    max_k: int = 50

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ServiceConfig":
        """Read the JSON config file, then apply TSLATENT_* environment
        overrides."""
        fields: dict = {}
        if path is not None:
            fields.update(json.loads(Path(path).read_text(encoding="utf-8")))
        config = cls(**fields)
        env_map = {
            "TSLATENT_HOST": "host",
            "TSLATENT_PORT": "port",
            "TSLATENT_DATASET": "dataset_path",
            "TSLATENT_TREND_AE": "trend_ae_path",
            "TSLATENT_VOL_AE": "vol_ae_path",
            "TSLATENT_ALIGNER": "aligner_path",
            "TSLATENT_ADMIN_TOKEN": "admin_token",
            "TSLATENT_MAX_K": "max_k",
        }
        overrides: dict = {}
        for env_name, field_name in env_map.items():
            raw = os.environ.get(env_name)
            if raw is not None:
                overrides[field_name] = int(raw) if field_name in ("port", "max_k") else raw
        return replace(config, **overrides)


class SketchQuery(BaseModel):
    points: list[float]
    k: int = 9


class TextQuery(BaseModel):
    text: str
    k: int = 9


class RebuildRequest(BaseModel):
    dataset_path: str
    trend_ae_path: str
    vol_ae_path: str
    aligner_path: str | None = None


def resample_points(points: list[float], target_length: int) -> np.ndarray:
    """Piecewise-linear resampling of evenly spaced samples onto
    ``target_length`` evenly spaced positions."""
    source = np.asarray(points, dtype=np.float64)
    positions = np.linspace(0.0, len(points) - 1.0, target_length)
    return np.interp(positions, np.arange(len(points), dtype=np.float64), source)


def _result_payload(engine: Engine, sid: str, score: float) -> dict:
    record = engine.records.get(sid, {"id": sid})
    out = {
        "id": sid,
        "score": score,
        "series": record.get("series"),
        "vol_series": record.get("vol_series"),
    }
    if record.get("labels") is not None:
        out["labels"] = record["labels"]
    if record.get("caption") is not None:
        out["caption"] = record["caption"]
    return out


def create_app(config: ServiceConfig, engine: Engine | None = None) -> FastAPI:
    app = FastAPI(title="tslatent query service")
    app.state.config = config
    app.state.engine = engine
    app.state.rebuild_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    def malformed_body(request: Request, exc: RequestValidationError):
        # malformed request bodies are client errors, not semantic 422s
        # (422 is reserved for unmatchable text queries)
        message = exc.errors()[0].get("msg", "invalid body") if exc.errors() else "invalid body"
        return JSONResponse(
            status_code=400,
            content={"detail": f"malformed request: {message}"},
        )

    def current_engine() -> Engine:
        current = app.state.engine
        if current is None:
            raise HTTPException(status_code=503, detail="indexes not loaded yet")
        return current

    @app.get("/api/health")
    def health():
        return {"status": "ok" if app.state.engine is not None else "loading"}

    @app.get("/api/info")
    def info():
        engine = current_engine()
        return {
            "dataset": engine.dataset_name,
            "generation": engine.generation,
            "sketch_index": {
                "size": len(engine.sketch_index),
                "dim": engine.sketch_index.dim,
            },
            "text_index": (
                {"size": len(engine.text_index), "dim": engine.text_index.dim}
                if engine.text_index is not None
                else None
            ),
            "model_checksums": engine.checksums,
        }

    @app.post("/api/query/sketch")
    def query_sketch(body: SketchQuery):
        engine = current_engine()
        if len(body.points) < 2 or len(body.points) > MAX_SKETCH_POINTS:
            raise HTTPException(
                status_code=400,
                detail=f"points must contain between 2 and {MAX_SKETCH_POINTS} samples",
            )
        if any(not math.isfinite(p) for p in body.points):
            raise HTTPException(status_code=400, detail="points must be finite")
        if body.k < 1:
            raise HTTPException(status_code=400, detail="k must be at least 1")
        k = min(body.k, config.max_k)
        input_dim = engine.sketch_models.trend_ae.input_dim
        resampled = resample_points(body.points, input_dim)
        sketch = minmax_normalize(Series(id="sketch", values=resampled))
        embedding = combined_embedding(engine.sketch_models, sketch)
        result = engine.sketch_index.query(embedding, k)
        return {
            "results": [
                _result_payload(engine, sid, score) for sid, score in result.entries
            ],
            "resampled_query": sketch.values.tolist(),
        }

    @app.post("/api/query/text")
    def query_text(body: TextQuery):
        engine = current_engine()
        if not body.text.strip():
            raise HTTPException(status_code=400, detail="text must be non-empty")
        if body.k < 1:
            raise HTTPException(status_code=400, detail="k must be at least 1")
        if engine.aligner is None or engine.text_index is None:
            raise HTTPException(status_code=503, detail="text index not loaded")
        try:
            embedding = embed_text_query(engine.aligner, body.text)
        except UnmatchableQueryError as err:
            raise HTTPException(
                status_code=422,
                detail={
                    "message": "query has no in-vocabulary tokens",
                    "unknown_tokens": err.unknown_tokens,
                },
            ) from None
        result = engine.text_index.query(embedding, min(body.k, config.max_k))
        return {
            "results": [
                _result_payload(engine, sid, score) for sid, score in result.entries
            ]
        }

    @app.get("/api/series/{series_id}")
    def get_series(series_id: str):
        engine = current_engine()
        record = engine.records.get(series_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown id {series_id!r}")
        return record

    @app.post("/api/admin/rebuild")
    def rebuild(body: RebuildRequest, request: Request):
        token = request.headers.get("x-admin-token")
        if config.admin_token is None or token != config.admin_token:
            raise HTTPException(status_code=401, detail="admin token required")
        if not app.state.rebuild_lock.acquire(blocking=False):
            raise HTTPException(status_code=409, detail="rebuild already running")
        try:
            previous = app.state.engine
            next_generation = (previous.generation + 1) if previous else 0
            engine = build_engine(
                body.dataset_path,
                body.trend_ae_path,
                body.vol_ae_path,
                aligner_path=body.aligner_path,
                generation=next_generation,
            )
            app.state.engine = engine
        except (OSError, ValueError, KeyError) as err:
            raise HTTPException(status_code=400, detail=str(err)) from None
        finally:
            app.state.rebuild_lock.release()
        return {"status": "ok", "generation": app.state.engine.generation}

    return app


def build_engine_from_config(config: ServiceConfig) -> Engine | None:
    if None in (config.dataset_path, config.trend_ae_path, config.vol_ae_path):
        return None
    return build_engine(
        config.dataset_path,
        config.trend_ae_path,
        config.vol_ae_path,
        aligner_path=config.aligner_path,
    )


def serve(config: ServiceConfig) -> None:
    import uvicorn

    app = create_app(config, build_engine_from_config(config))
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
