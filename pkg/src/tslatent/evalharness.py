"""Measurement protocol: perturbed query sets, retrieval-quality metrics
(MAPE, Pearson correlation, precision@k, diversity), per-query latency, and
report emission in the shape of the comparison tables."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import PcaModel, RawDatabase, bf_avg_search, bf_search, pca_embed
from .encoders import (
    Aligner,
    SketchEncoders,
    combined_embedding,
    embed_series_for_text,
    embed_text_query,
)
from .features import (
    VolConfig,
    add_gaussian_noise,
    circular_shift_right,
    minmax_normalize,
    volatility_series,
)
from .index import VectorIndex
from .series import RegimeLabels, Series, VolatilitySeries

SMALL_DENOMINATOR = 1e-8

KNOWN_METHODS = ("bf", "bf_avg", "pca16", "ae")


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def mape(retrieved, query) -> float:
    """Mean ratio of point-wise absolute error to the query value.

    Points where the query magnitude falls below 1e-8 are excluded; if all
    points are excluded the result is nan (undefined).
    """
    r, q = _values(retrieved), _values(query)
    if r.shape != q.shape:
        raise ValueError(f"length mismatch: {r.shape} vs {q.shape}")
    mask = np.abs(q) >= SMALL_DENOMINATOR
    if not np.any(mask):
        return math.nan
    return float(np.mean(np.abs(r[mask] - q[mask]) / np.abs(q[mask])))


def pearson_corr(a, b) -> float:
    """Product-moment correlation; defined as 0 when either side has zero
    variance (degenerate)."""
    x, y = _values(a), _values(b)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    xd = x - x.mean()
    yd = y - y.mean()
    sx = float(np.sqrt((xd * xd).sum()))
    sy = float(np.sqrt((yd * yd).sum()))
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(np.clip((xd * yd).sum() / (sx * sy), -1.0, 1.0))


def precision_at_k(
    retrieved_regimes: list[list[str]], query_regimes: list[str], k: int = 9
) -> float:
    """Mean fraction of the top-k whose regime matches the queried one."""
    if len(retrieved_regimes) != len(query_regimes) or not query_regimes:
        raise ValueError("need one retrieved list per query")
    fractions = []
    for regimes, wanted in zip(retrieved_regimes, query_regimes):
        if len(regimes) != k:
            raise ValueError(f"expected exactly {k} results, got {len(regimes)}")
        fractions.append(sum(1 for r in regimes if r == wanted) / k)
    return float(np.mean(fractions))


def hit_rate_at_k(
    retrieved_regimes: list[list[str]], query_regimes: list[str], k: int = 9
) -> float:
    """Fraction of queries with at least one match in the top-k."""
    if len(retrieved_regimes) != len(query_regimes) or not query_regimes:
        raise ValueError("need one retrieved list per query")
    hits = [
        1.0 if wanted in regimes[:k] else 0.0
        for regimes, wanted in zip(retrieved_regimes, query_regimes)
    ]
    return float(np.mean(hits))


def diversity(id_lists: list[list[str]]) -> float:
    """Distinct retrieved ids over total retrieved count."""
    total = sum(len(ids) for ids in id_lists)
    if total == 0:
        raise ValueError("no retrieval results")
    distinct = len({sid for ids in id_lists for sid in ids})
    return distinct / total


@dataclass(frozen=True)
class ExperimentConfig:
    noise_sigma: float = 0.05
    shift_steps: int = 0
    k: int = 1
    query_count: int = 302
    seed: int = 0
    methods: tuple[str, ...] = ("bf", "bf_avg", "pca16", "ae")

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.query_count < 1:
            raise ValueError("query_count must be at least 1")
        unknown = set(self.methods) - set(KNOWN_METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")


def make_query_set(
    test_series: list[Series],
    noise_sigma: float,
    shift_steps: int,
    count: int,
    seed: int,
    vol_config: VolConfig = VolConfig(),
) -> list[tuple[Series, VolatilitySeries]]:
    """Perturb test series into queries: noise, circular right shift, then
    re-normalization; the query volatility series is derived afterwards."""
    if count > len(test_series):
        raise ValueError(
            f"requested {count} queries but only {len(test_series)} test series"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(test_series), size=count, replace=False)
    queries = []
    for pos in chosen:
        source = test_series[int(pos)]
        base = source if source.normalized else minmax_normalize(source)
        noisy = add_gaussian_noise(base, noise_sigma, seed=int(rng.integers(2**63)))
        shifted = circular_shift_right(noisy, shift_steps)
        query = minmax_normalize(shifted)
        queries.append((query, volatility_series(query, vol_config)))
    return queries


@dataclass
class ExperimentArtifacts:
    """Everything a retrieval method needs, shared across experiment rows."""

    raw_db: RawDatabase
    labels_by_id: dict[str, RegimeLabels] = field(default_factory=dict)
    pca_model: PcaModel | None = None
    pca_index: VectorIndex | None = None
    sketch_models: SketchEncoders | None = None
    ae_index: VectorIndex | None = None
    vol_config: VolConfig = VolConfig()

    def __post_init__(self) -> None:
        self._row_lookup = {sid: i for i, sid in enumerate(self.raw_db.ids)}

    def row_of(self, sid: str) -> int:
        return self._row_lookup[sid]


def _method_runner(method: str, artifacts: ExperimentArtifacts, k: int):
    """Return a closure mapping (query, query_vol) to ranked ids. The
    closure does all per-query work (embedding included) so timing it is
    honest."""
    if method == "bf":
        return lambda q, qv: bf_search(artifacts.raw_db, q, k).ids()
    if method == "bf_avg":
        return lambda q, qv: bf_avg_search(artifacts.raw_db, q, qv, k).ids()
    if method == "pca16":
        if artifacts.pca_model is None or artifacts.pca_index is None:
            raise ValueError("pca16 requested but PCA artifacts are missing")
        return lambda q, qv: artifacts.pca_index.query(
            pca_embed(artifacts.pca_model, q, qv), k
        ).ids()
    if method == "ae":
        if artifacts.sketch_models is None or artifacts.ae_index is None:
            raise ValueError("ae requested but encoder artifacts are missing")
        return lambda q, qv: artifacts.ae_index.query(
            combined_embedding(artifacts.sketch_models, q), k
        ).ids()
    raise ValueError(f"unknown method {method!r}")


@dataclass
class MethodSummary:
    method: str
    trend_mape: float
    trend_corr: float
    vol_mape: float
    vol_corr: float
    latency_mean: float
    latency_std: float
    trend_l2_mean: float
    n_queries: int
    n_retrieved: int


@dataclass
class EvalReport:
    config: ExperimentConfig
    methods: list[MethodSummary]

    def summary(self, method: str) -> MethodSummary:
        for row in self.methods:
            if row.method == method:
                return row
        raise KeyError(method)


def _aggregate(records: list[dict], method: str, config: ExperimentConfig) -> MethodSummary:
    per_item: dict[str, list[float]] = {
        "trend_mape": [],
        "trend_corr": [],
        "vol_mape": [],
        "vol_corr": [],
        "trend_l2": [],
    }
    times = []
    n_retrieved = 0
    for record in records:
        times.append(record["elapsed_s"])
        for item in record["retrieved"]:
            n_retrieved += 1
            for key in per_item:
                value = item[key]
                if not math.isnan(value):
                    per_item[key].append(value)
    return MethodSummary(
        method=method,
        trend_mape=float(np.mean(per_item["trend_mape"])),
        trend_corr=float(np.mean(per_item["trend_corr"])),
        vol_mape=float(np.mean(per_item["vol_mape"])),
        vol_corr=float(np.mean(per_item["vol_corr"])),
        latency_mean=float(np.mean(times)),
        latency_std=float(np.std(times)),
        trend_l2_mean=float(np.mean(per_item["trend_l2"])),
        n_queries=len(records),
        n_retrieved=n_retrieved,
    )


def run_experiment(
    config: ExperimentConfig,
    artifacts: ExperimentArtifacts,
    test_series: list[Series],
    records_path: str | Path | None = None,
) -> EvalReport:
    """Run every configured method over the perturbed query set.

    Per query and retrieved item the harness records trend and volatility
    MAPE/correlation against the stored database entries, plus wall-clock
    time per query (embedding included, one untimed warm-up query first).
    Raw records can be written as JSON lines for audit.
    """
    queries = make_query_set(
        test_series,
        config.noise_sigma,
        config.shift_steps,
        config.query_count,
        config.seed,
        artifacts.vol_config,
    )
    summaries = []
    all_records: list[dict] = []
    for method in config.methods:
        runner = _method_runner(method, artifacts, config.k)
        warm_q, warm_v = queries[0]
        runner(warm_q, warm_v)
        records = []
        for query, query_vol in queries:
            start = time.perf_counter()
            ids = runner(query, query_vol)
            elapsed = time.perf_counter() - start
            retrieved = []
            for sid in ids:
                row = artifacts.row_of(sid)
                stored_trend = artifacts.raw_db.trend[row]
                stored_vol = artifacts.raw_db.vol[row]
                retrieved.append(
                    {
                        "id": sid,
                        "trend_mape": mape(stored_trend, query.values),
                        "trend_corr": pearson_corr(stored_trend, query.values),
                        "vol_mape": mape(stored_vol, query_vol.values),
                        "vol_corr": pearson_corr(stored_vol, query_vol.values),
                        "trend_l2": float(
                            np.linalg.norm(stored_trend - query.values)
                        ),
                    }
                )
            records.append(
                {
                    "method": method,
                    "query_id": query.id,
                    "elapsed_s": elapsed,
                    "retrieved": retrieved,
                }
            )
        summaries.append(_aggregate(records, method, config))
        all_records.extend(records)
    if records_path is not None:
        with Path(records_path).open("w", encoding="utf-8") as handle:
            for record in all_records:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
    return EvalReport(config=config, methods=summaries)


# ---------------------------------------------------------------------------
# text retrieval evaluation
# ---------------------------------------------------------------------------


def split_phrase_bank(bank, holdout_fraction: float = 0.25, seed: int = 0):
    """Split each (feature, regime) phrase list into a training bank and
    held-out phrasings for out-of-sample queries.

    A phrase is only held out when it carries at least one token that is
    unique to its regime across the whole bank and that also survives in a
    kept phrase of the same regime: a bag-of-words featurizer cannot embed
    fully novel wording, and tokens shared across regimes carry no regime
    signal. Every regime keeps at least one phrase. Returns
    (train_bank, holdout) with holdout keyed by (feature, regime).
    """
    from .encoders import tokenize
    from .synthgen import PhraseBank

    if not 0.0 <= holdout_fraction < 1.0:
        raise ValueError("holdout_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)

    token_homes: dict[str, set[tuple[str, str]]] = {}
    for feature, regimes in bank.entries.items():
        for regime, phrases in regimes.items():
            for phrase in phrases:
                for tok in tokenize(phrase):
                    token_homes.setdefault(tok, set()).add((feature, regime))

    kept_entries: dict[str, dict[str, tuple[str, ...]]] = {}
    holdout: dict[tuple[str, str], list[str]] = {}
    for feature in sorted(bank.entries):
        for regime in sorted(bank.entries[feature]):
            key = (feature, regime)
            phrases = list(bank.entries[feature][regime])
            target = min(int(round(holdout_fraction * len(phrases))), len(phrases) - 1)
            kept = list(phrases)
            held: list[str] = []
            for pos in rng.permutation(len(phrases)):
                if len(held) >= target:
                    break
                candidate = phrases[int(pos)]
                if len(kept) <= 1 or candidate not in kept:
                    continue
                kept_tokens = {
                    tok
                    for phrase in kept
                    if phrase != candidate
                    for tok in tokenize(phrase)
                }
                anchors = [
                    tok
                    for tok in tokenize(candidate)
                    if token_homes[tok] == {key} and tok in kept_tokens
                ]
                if anchors:
                    kept.remove(candidate)
                    held.append(candidate)
            # a later holdout can remove an earlier one's anchor; re-add
            # held phrases until every anchor survives in the final kept set
            changed = True
            while changed and held:
                changed = False
                kept_tokens = {tok for phrase in kept for tok in tokenize(phrase)}
                for candidate in list(held):
                    anchored = any(
                        token_homes[tok] == {key} and tok in kept_tokens
                        for tok in tokenize(candidate)
                    )
                    if not anchored:
                        held.remove(candidate)
                        kept.append(candidate)
                        changed = True
            kept_entries.setdefault(feature, {})[regime] = tuple(kept)
            if held:
                holdout[key] = held
    return PhraseBank(entries=kept_entries), holdout


def phrase_queries(
    phrases_by_regime: dict[tuple[str, str], list[str]],
    per_regime: int,
    seed: int = 0,
) -> list[tuple[str, str, str]]:
    """Sample up to ``per_regime`` single-feature queries per regime."""
    rng = np.random.default_rng(seed)
    queries = []
    for (feature, regime), phrases in sorted(phrases_by_regime.items()):
        chosen = rng.permutation(len(phrases))[:per_regime]
        for pos in chosen:
            queries.append((feature, regime, phrases[int(pos)]))
    return queries


@dataclass
class TextEvalReport:
    precision_in_sample: float
    precision_out_sample: float
    hit_rate_in_sample: float
    hit_rate_out_sample: float
    diversity: float
    k: int
    n_queries_in: int
    n_queries_out: int
    unmatchable_out: int = 0


def evaluate_text_retrieval(
    aligner: Aligner,
    models: SketchEncoders,
    eval_entries: list[tuple[Series, RegimeLabels]],
    in_sample_queries: list[tuple[str, str, str]],
    out_sample_queries: list[tuple[str, str, str]],
    k: int = 9,
) -> TextEvalReport:
    """Precision@k over a text index of held-out series.

    Queries are (feature, regime, phrase) triples; a retrieved item matches
    when its ground-truth regime on the queried feature equals the queried
    regime. Out-of-sample phrases with no in-vocabulary token are counted
    as complete misses (a text encoder replacement cannot embed them).
    """
    if len(eval_entries) < k:
        raise ValueError(f"need at least {k} evaluation series")
    labels = {s.id: lab for s, lab in eval_entries}
    items = []
    for s, _ in eval_entries:
        emb = embed_series_for_text(aligner, models, s)
        items.append((s.id, emb, None))
    text_index = VectorIndex.build(aligner.shared_dim, items)

    def run(queries):
        retrieved_regimes, wanted, id_lists = [], [], []
        unmatchable = 0
        for feature, regime, phrase in queries:
            try:
                q = embed_text_query(aligner, phrase)
            except ValueError:
                unmatchable += 1
                retrieved_regimes.append(["<unmatchable>"] * k)
                wanted.append(regime)
                id_lists.append([])
                continue
            result = text_index.query(q, k)
            ids = result.ids()
            retrieved_regimes.append([labels[sid].feature(feature) for sid in ids])
            wanted.append(regime)
            id_lists.append(ids)
        return retrieved_regimes, wanted, id_lists, unmatchable

    in_regimes, in_wanted, in_ids, _ = run(in_sample_queries)
    out_regimes, out_wanted, out_ids, unmatchable_out = run(out_sample_queries)
    all_ids = [ids for ids in in_ids + out_ids if ids]

    def maybe(metric, regimes, wanted):
        return metric(regimes, wanted, k) if wanted else math.nan

    return TextEvalReport(
        precision_in_sample=maybe(precision_at_k, in_regimes, in_wanted),
        precision_out_sample=maybe(precision_at_k, out_regimes, out_wanted),
        hit_rate_in_sample=maybe(hit_rate_at_k, in_regimes, in_wanted),
        hit_rate_out_sample=maybe(hit_rate_at_k, out_regimes, out_wanted),
        diversity=diversity(all_ids),
        k=k,
        n_queries_in=len(in_sample_queries),
        n_queries_out=len(out_sample_queries),
        unmatchable_out=unmatchable_out,
    )


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

_CSV_COLUMNS = (
    "noise_sigma",
    "shift_steps",
    "k",
    "method",
    "trend_mape",
    "trend_corr",
    "vol_mape",
    "vol_corr",
    "latency_mean",
    "latency_std",
    "trend_l2_mean",
)


def report_to_dict(report: EvalReport) -> dict:
    return {
        "config": {
            "noise_sigma": report.config.noise_sigma,
            "shift_steps": report.config.shift_steps,
            "k": report.config.k,
            "query_count": report.config.query_count,
            "seed": report.config.seed,
            "methods": list(report.config.methods),
        },
        "methods": [vars(row).copy() for row in report.methods],
    }


def emit_report(report: EvalReport, fmt: str, path: str | Path) -> None:
    """Write a report as json, csv, or a markdown table mirroring the
    measure-per-row comparison layout."""
    path = Path(path)
    if fmt == "json":
        path.write_text(
            json.dumps(report_to_dict(report), indent=1, sort_keys=True),
            encoding="utf-8",
        )
    elif fmt == "csv":
        lines = [",".join(_CSV_COLUMNS)]
        for row in report.methods:
            values = (
                report.config.noise_sigma,
                report.config.shift_steps,
                report.config.k,
                row.method,
                row.trend_mape,
                row.trend_corr,
                row.vol_mape,
                row.vol_corr,
                row.latency_mean,
                row.latency_std,
                row.trend_l2_mean,
            )
            lines.append(
                ",".join(
                    v if isinstance(v, str) else format(v, ".17g") for v in values
                )
            )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif fmt == "markdown":
        cfg = report.config
        header = f"(noise={cfg.noise_sigma}, shift={cfg.shift_steps}, k={cfg.k})"
        lines = [
            f"| measure {header} | " + " | ".join(r.method for r in report.methods) + " |",
            "|" + " --- |" * (len(report.methods) + 1),
        ]
        rows = (
            ("TS-(MAPE,CORR)", lambda r: f"({r.trend_mape:.3e}, {r.trend_corr:.3e})"),
            ("Vol-(MAPE,CORR)", lambda r: f"({r.vol_mape:.3e}, {r.vol_corr:.3e})"),
            (
                "Time-(mean,std)",
                lambda r: f"({r.latency_mean:.3e}, {r.latency_std:.3e})",
            ),
        )
        for label, fmt_fn in rows:
            lines.append(
                f"| {label} | " + " | ".join(fmt_fn(r) for r in report.methods) + " |"
            )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
