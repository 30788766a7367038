"""Acceptance gate: one test per release criterion, each printing a
pass/fail line (run with ``pytest -s tests/test_acceptance.py`` to watch).

The heavyweight fixtures (trained models, benchmark database, text
pipeline) are module-scoped so the whole gate runs in one pytest
invocation.
"""

import math
import time
from types import SimpleNamespace

import numpy as np
import pytest

from tslatent.baselines import RawDatabase, bf_avg_search, bf_search, fit_pca, pca_embed
from tslatent.encoders import (
    AutoencoderModel,
    SketchEncoders,
    autoencoder_gradient_check,
    combined_embedding,
    combined_embedding_batch,
    contrastive_loss,
    train_aligner,
    train_autoencoder,
)
from tslatent.evalharness import (
    ExperimentArtifacts,
    ExperimentConfig,
    diversity,
    evaluate_text_retrieval,
    mape,
    pearson_corr,
    phrase_queries,
    precision_at_k,
    run_experiment,
    split_phrase_bank,
)
from tslatent.features import minmax_matrix, minmax_normalize, volatility_matrix, volatility_series
from tslatent.index import IndexLoadError, VectorIndex, load_index, save_index
from tslatent.manifest import from_samples
from tslatent.neuralnet import CheckpointError, TrainConfig, load_model, save_model
from tslatent.pipeline import build_sketch_index, prepare_dataset
from tslatent.series import Series, VolatilitySeries
from tslatent.synthgen import (
    FilterConfig,
    GenParams,
    benchmark_grid,
    builtin_phrase_bank,
    generate,
    make_dataset,
    text_grid,
)

# distinct regime classes across the four captioned features
# (3 trend + 3 volatility + 2 shock + 2 liquidity)
TOTAL_REGIME_CLASSES = 10


def report(name: str, detail: str) -> None:
    print(f"\n[PASS] {name}: {detail}")


# ---------------------------------------------------------------------------
# shared artifacts
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def bench():
    """Benchmark database (>= 1500 structured series), held-out test ids,
    trained autoencoders, and the full retrieval artifact set."""
    samples = make_dataset(
        1824, grid=benchmark_grid(), filter_mode="filtered", seed=2024
    )
    prepared = prepare_dataset(from_samples("benchmark", samples))
    db = prepared.raw_database()

    rng = np.random.default_rng(7)
    test_rows = np.sort(rng.choice(len(prepared.ids), size=302, replace=False))
    test_set = set(test_rows.tolist())
    train_rows = np.array([i for i in range(len(prepared.ids)) if i not in test_set])

    config = TrainConfig(epochs=150, batch_size=64, seed=0)
    trend_ae, trend_hist = train_autoencoder(prepared.trend_matrix[train_rows], config)
    vol_ae, _ = train_autoencoder(
        np.clip(prepared.vol_matrix[train_rows], 0.0, 1.0), config
    )
    models = SketchEncoders(trend_ae=trend_ae, vol_ae=vol_ae)
    ae_index = build_sketch_index(prepared, models)

    pca = fit_pca(db)
    pca_items = []
    for i, sid in enumerate(prepared.ids):
        emb = pca_embed(
            pca,
            Series(id=sid, values=db.trend[i], normalized=True),
            VolatilitySeries(source_id=sid, values=db.vol[i]),
        )
        pca_items.append((sid, emb, None))
    pca_index = VectorIndex.build(2 * pca.n_components, pca_items)

    artifacts = ExperimentArtifacts(
        raw_db=db,
        pca_model=pca,
        pca_index=pca_index,
        sketch_models=models,
        ae_index=ae_index,
    )
    return SimpleNamespace(
        prepared=prepared,
        db=db,
        models=models,
        ae_index=ae_index,
        artifacts=artifacts,
        test_rows=test_rows,
        trend_hist=trend_hist,
        test_series=[prepared.normalized[i] for i in test_rows],
    )


def _text_pipeline():
    """The captioned-retrieval protocol: phrase-bank split with anchored
    holdouts, the shape-family grid, frozen autoencoders, and the
    clause-augmented aligner with temperature selection."""
    bank = builtin_phrase_bank("augmented")
    train_bank, holdout = split_phrase_bank(bank, holdout_fraction=0.25, seed=5)
    filter_config = FilterConfig(shock_threshold=0.45)
    samples = make_dataset(
        4048,
        grid=text_grid(),
        bank=train_bank,
        filter_mode="filtered",
        seed=31,
        filter_config=filter_config,
    )
    rng = np.random.default_rng(17)
    order = rng.permutation(len(samples))
    eval_idx, train_idx = order[:404], order[404:]

    trend = minmax_matrix(np.vstack([s.series.values for s in samples]))
    vol = volatility_matrix(trend)
    ae_config = TrainConfig(epochs=100, batch_size=64, seed=0)
    trend_ae, _ = train_autoencoder(trend[train_idx], ae_config)
    vol_ae, _ = train_autoencoder(np.clip(vol[train_idx], 0.0, 1.0), ae_config)
    models = SketchEncoders(trend_ae=trend_ae, vol_ae=vol_ae)

    series = [
        Series(id=s.series.id, values=trend[i], normalized=True)
        for i, s in enumerate(samples)
    ]
    pairs = [(samples[i].caption, series[i]) for i in train_idx]
    result = train_aligner(
        pairs,
        models,
        TrainConfig(epochs=300, batch_size=256, seed=1),
        clause_pair_fraction=0.5,
    )

    in_sample_map = {
        (feature, regime): list(phrases)
        for feature, regimes in train_bank.entries.items()
        for regime, phrases in regimes.items()
    }
    return SimpleNamespace(
        samples=samples,
        series=series,
        train_idx=train_idx,
        eval_idx=eval_idx,
        models=models,
        aligner_result=result,
        train_bank=train_bank,
        holdout=holdout,
        in_sample_map=in_sample_map,
        filter_config=filter_config,
    )


@pytest.fixture(scope="module")
def textpipe():
    start = time.perf_counter()
    pipeline = _text_pipeline()
    pipeline.build_seconds = time.perf_counter() - start
    return pipeline


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


class TestGeneratorClosedForms:
    def test_generator_closed_forms(self):
        start = time.perf_counter()
        for kappa in np.linspace(0.0, 1.0, 11):
            for seed in (0, 1, 12345):
                out = generate(
                    GenParams(
                        r_bar=100.0, kappa=float(kappa), sigma=0.0, trend=0.0,
                        shock_prob=0.0, length=30, seed=seed,
                    )
                )
                np.testing.assert_array_equal(out.values, np.full(30, 100.0))
        np.testing.assert_array_equal(
            generate(GenParams(r_bar=100, kappa=1, sigma=0, trend=2, shock_prob=0, length=4)).values,
            [100.0, 102.0, 102.0, 102.0],
        )
        np.testing.assert_array_equal(
            generate(GenParams(r_bar=1, kappa=0, sigma=0, trend=-5, shock_prob=0, length=3)).values,
            [1.0, 0.0, 0.0],
        )
        elapsed = time.perf_counter() - start
        assert elapsed < 1.0
        report(
            "generator closed forms",
            f"fixed point, drift and clamp unrolls exact in {elapsed:.3f}s",
        )


class TestGradientFidelity:
    def test_gradient_fidelity(self):
        start = time.perf_counter()
        rng = np.random.default_rng(3)

        encoder_side = AutoencoderModel.create(seed=1)  # 30-512-256-16 / reverse
        batch = rng.random((4, 30))
        ae_report = autoencoder_gradient_check(
            encoder_side, batch, n_probes=25, step=1e-5, tolerance=1e-4, seed=0
        )
        assert ae_report.passed, ae_report.max_relative_error

        vol_side = AutoencoderModel.create(seed=2)
        vol_batch = np.clip(volatility_matrix(batch), 0.0, 1.0)
        vol_report = autoencoder_gradient_check(
            vol_side, vol_batch, n_probes=25, step=1e-5, tolerance=1e-4, seed=1
        )
        assert vol_report.passed, vol_report.max_relative_error

        # contrastive loss: analytic gradients vs central differences over
        # sampled coordinates of both batches
        n, dim = 4, 64
        t = rng.normal(size=(n, dim))
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        v = rng.normal(size=(n, dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        max_err = 0.0
        for tau in (0.1, 1.0):
            _, grad_t, grad_v = contrastive_loss(t, v, tau)
            for mat, grad in ((t, grad_t), (v, grad_v)):
                for _ in range(12):  # 12 probes x 2 batches x 2 taus = 48 >= 20
                    i = int(rng.integers(n))
                    j = int(rng.integers(dim))
                    original = mat[i, j]
                    mat[i, j] = original + 1e-5
                    plus, _, _ = contrastive_loss(t, v, tau)
                    mat[i, j] = original - 1e-5
                    minus, _, _ = contrastive_loss(t, v, tau)
                    mat[i, j] = original
                    numeric = (plus - minus) / 2e-5
                    denom = max(abs(numeric), abs(grad[i, j]), 1e-8)
                    max_err = max(max_err, abs(numeric - grad[i, j]) / denom)
        assert max_err < 1e-4
        elapsed = time.perf_counter() - start
        assert elapsed < 30.0
        report(
            "gradient fidelity",
            f"AE architectures rel err {max(ae_report.max_relative_error, vol_report.max_relative_error):.2e}, "
            f"contrastive rel err {max_err:.2e}, in {elapsed:.1f}s",
        )


class TestAutoencoderTraining:
    def test_ae_training_criterion(self):
        start = time.perf_counter()
        samples = make_dataset(500, filter_mode="filtered", seed=101)
        data = np.vstack([minmax_normalize(s.series).values for s in samples])
        model, history = train_autoencoder(
            data, TrainConfig(epochs=200, batch_size=64, seed=0)
        )
        elapsed = time.perf_counter() - start
        assert history.final < 0.25 * history.initial
        assert history.val_mse[-1] < 4.0 * history.final
        assert elapsed < 300.0
        report(
            "AE training",
            f"train MSE {history.initial:.4f} -> {history.final:.5f} "
            f"(x{history.final / history.initial:.3f}), held-out "
            f"{history.val_mse[-1]:.5f} (x{history.val_mse[-1] / history.final:.2f}), "
            f"in {elapsed:.0f}s",
        )


class TestMembershipRoundTrip:
    def test_membership_round_trip(self, bench):
        rng = np.random.default_rng(11)
        rows = rng.choice(len(bench.db.ids), size=50, replace=False)
        worst_cos = 1.0
        for row in rows:
            sid = bench.db.ids[int(row)]
            member = Series(id=sid, values=bench.db.trend[int(row)], normalized=True)
            bf = bf_search(bench.db, member, 1)
            assert bf.ids()[0] == sid
            assert bf.entries[0][1] == pytest.approx(0.0, abs=1e-12)

            emb = combined_embedding(bench.models, member)
            top = bench.ae_index.query(emb, 1)
            assert top.ids()[0] == sid
            assert top.entries[0][1] >= 1.0 - 1e-6
            worst_cos = min(worst_cos, top.entries[0][1])
        report(
            "membership round-trip",
            f"50 members: bf distance 0, AE top-1 cosine >= {worst_cos:.9f}",
        )


class TestBruteForceOracleExactness:
    def test_oracle_exactness(self):
        rng = np.random.default_rng(13)
        items = []
        for i in range(200):
            s = minmax_normalize(Series(id=f"o{i:03d}", values=rng.random(30) * 40 + 5))
            items.append((s.id, s, volatility_series(s)))
        db = RawDatabase.from_pairs(items)
        matrix = rng.normal(size=(200, 16))
        matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
        index = VectorIndex.build(
            16, [(f"o{i:03d}", matrix[i], None) for i in range(200)]
        )

        for trial in range(100):
            q = minmax_normalize(Series(id="q", values=rng.random(30)))
            qv = volatility_series(q)
            k = int(rng.integers(1, 12))

            naive_bf = sorted(
                ((float(np.linalg.norm(db.trend[i] - q.values)), db.ids[i]) for i in range(200)),
                key=lambda t: (t[0], t[1]),
            )[:k]
            assert bf_search(db, q, k).ids() == [sid for _, sid in naive_bf]

            naive_avg = sorted(
                (
                    (
                        0.5 * (
                            float(np.linalg.norm(db.trend[i] - q.values))
                            + float(np.linalg.norm(db.vol[i] - qv.values))
                        ),
                        db.ids[i],
                    )
                    for i in range(200)
                ),
                key=lambda t: (t[0], t[1]),
            )[:k]
            assert bf_avg_search(db, q, qv, k).ids() == [sid for _, sid in naive_avg]

            uq = rng.normal(size=16)
            uq /= np.linalg.norm(uq)
            naive_cos = sorted(
                ((-float(matrix[i] @ uq), f"o{i:03d}") for i in range(200)),
                key=lambda t: (t[0], t[1]),
            )[:k]
            assert index.query(uq, k).ids() == [sid for _, sid in naive_cos]
        report(
            "brute-force oracle exactness",
            "bf, bf_avg and index top-k match naive oracles on 100 queries (N=200)",
        )


class TestRetrievalBenchmarkRows:
    def test_benchmark_row_grid(self, bench):
        start = time.perf_counter()
        rows = [(0.05, 0, 1), (0.05, 5, 1), (0.05, 0, 3), (0.05, 5, 3)]
        reports = {}
        for noise, shift, k in rows:
            config = ExperimentConfig(
                noise_sigma=noise, shift_steps=shift, k=k, query_count=302, seed=11
            )
            reports[(noise, shift, k)] = run_experiment(
                config, bench.artifacts, bench.test_series
            )

        for key, rep in reports.items():
            bf = rep.summary("bf")
            bf_avg = rep.summary("bf_avg")
            # (a) brute force minimizes the trend L2 distance in every row
            for row in rep.methods:
                assert bf.trend_l2_mean <= row.trend_l2_mean + 1e-12, (key, row.method)
            # (b) averaging in the volatility distance helps volatility MAPE
            assert bf_avg.vol_mape <= bf.vol_mape + 1e-12, key

        # (c) AE quality at the unshifted k=1 row
        ae = reports[(0.05, 0, 1)].summary("ae")
        assert ae.trend_corr >= 0.90
        assert ae.vol_corr >= 0.70
        elapsed = time.perf_counter() - start
        assert elapsed < 600.0
        report(
            "retrieval benchmark rows",
            f"4 rows x 302 queries over {len(bench.db)} series: bf minimal trend-L2, "
            f"bf_avg vol-MAPE <= bf, AE row-1 TS-CORR {ae.trend_corr:.3f} "
            f"Vol-CORR {ae.vol_corr:.3f}, in {elapsed:.0f}s",
        )


class TestLatencyScaling:
    def test_latency_at_scale(self):
        n = 100_000
        grid = benchmark_grid()
        rng = np.random.default_rng(99)
        rows = np.empty((n, 30))
        from dataclasses import replace

        for i in range(n):
            cell = grid[i % len(grid)]
            rows[i] = generate(
                replace(cell.params, seed=int(rng.integers(2**63)))
            ).values
        norm = minmax_matrix(rows)
        vol = volatility_matrix(norm)

        quick = TrainConfig(epochs=20, batch_size=64, seed=0)
        trend_ae, _ = train_autoencoder(norm[:2000], quick)
        vol_ae, _ = train_autoencoder(np.clip(vol[:2000], 0.0, 1.0), quick)
        models = SketchEncoders(trend_ae=trend_ae, vol_ae=vol_ae)

        ids = [f"s{i:06d}" for i in range(n)]
        embeddings = combined_embedding_batch(models, norm, vol)
        index = VectorIndex.build(32, [(ids[i], embeddings[i], None) for i in range(n)])
        db = RawDatabase(ids=ids, trend=norm, vol=vol)

        queries = []
        for j in range(30):
            noisy = rows[(j * 997) % n] + np.random.default_rng(j).normal(0, 0.05, 30)
            queries.append(minmax_normalize(Series(id=f"q{j}", values=noisy)))

        bf_search(db, queries[0], 1)  # warm-up, excluded
        index.query(combined_embedding(models, queries[0]), 1)

        bf_times, ae_times = [], []
        for q in queries:
            t0 = time.perf_counter()
            bf_search(db, q, 1)
            bf_times.append(time.perf_counter() - t0)
        for q in queries:
            t0 = time.perf_counter()
            index.query(combined_embedding(models, q), 1)
            ae_times.append(time.perf_counter() - t0)

        bf_mean, ae_mean = float(np.mean(bf_times)), float(np.mean(ae_times))
        assert ae_mean < bf_mean

        # slope sanity: the flat scan grows with N at fixed dim
        sub = VectorIndex.build(
            32, [(ids[i], embeddings[i], None) for i in range(20_000)]
        )
        unit_queries = [combined_embedding(models, q) for q in queries[:15]]
        sub.query(unit_queries[0], 1)
        sub_times, full_times = [], []
        for uq in unit_queries:
            t0 = time.perf_counter()
            sub.query(uq, 1)
            sub_times.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            index.query(uq, 1)
            full_times.append(time.perf_counter() - t0)
        assert float(np.mean(full_times)) > float(np.mean(sub_times))

        report(
            "latency scaling at N=100000",
            f"AE index {ae_mean * 1e3:.2f} ms < brute force {bf_mean * 1e3:.2f} ms "
            f"per query (ratio {bf_mean / ae_mean:.1f}x, embedding included); "
            f"scan time grows with N ({np.mean(sub_times) * 1e3:.2f} ms at 20k vs "
            f"{np.mean(full_times) * 1e3:.2f} ms at 100k)",
        )


class TestTextRetrieval:
    def test_text_retrieval_precision(self, textpipe):
        start = time.perf_counter()
        result = textpipe.aligner_result
        assert result.tau_losses[result.chosen_tau] == min(result.tau_losses.values())

        eval_entries = [
            (textpipe.series[i], textpipe.samples[i].labels)
            for i in textpipe.eval_idx
        ]
        in_queries = phrase_queries(textpipe.in_sample_map, per_regime=8, seed=2)
        out_queries = phrase_queries(textpipe.holdout, per_regime=3, seed=3)
        text_report = evaluate_text_retrieval(
            result.aligner, textpipe.models, eval_entries, in_queries, out_queries, k=9
        )

        random_baseline = 1.0 / TOTAL_REGIME_CLASSES
        assert text_report.precision_in_sample >= 0.80
        assert text_report.precision_out_sample >= 0.60
        assert text_report.precision_in_sample >= 3.0 * random_baseline
        assert text_report.precision_out_sample >= 3.0 * random_baseline
        assert 0.0 < text_report.diversity <= 1.0
        elapsed = time.perf_counter() - start
        assert textpipe.build_seconds + elapsed < 900.0
        report(
            "text retrieval precision",
            f"precision@9 in-sample {text_report.precision_in_sample:.3f} (>= 0.80), "
            f"out-of-sample {text_report.precision_out_sample:.3f} (>= 0.60), "
            f"diversity {text_report.diversity:.3f}, "
            f"3x chance bar {3 * random_baseline:.2f} cleared, eval in {elapsed:.0f}s",
        )

    def test_filtered_captions_beat_unfiltered(self, textpipe):
        start = time.perf_counter()
        unfiltered = make_dataset(
            4048,
            grid=text_grid(),
            bank=textpipe.train_bank,
            filter_mode="unfiltered",
            seed=31,
            filter_config=textpipe.filter_config,
        )
        # identical master seed: the series match, only labels and captions differ
        np.testing.assert_array_equal(
            unfiltered[0].series.values, textpipe.samples[0].series.values
        )

        in_queries = phrase_queries(textpipe.in_sample_map, per_regime=8, seed=2)
        tau = textpipe.aligner_result.chosen_tau

        def precision_for(dataset, seed):
            pairs = [
                (dataset[i].caption, textpipe.series[i]) for i in textpipe.train_idx
            ]
            result = train_aligner(
                pairs,
                textpipe.models,
                TrainConfig(epochs=120, batch_size=256, seed=seed),
                tau_grid=(tau,),
                clause_pair_fraction=0.5,
            )
            entries = [
                (textpipe.series[i], dataset[i].labels) for i in textpipe.eval_idx
            ]
            rep = evaluate_text_retrieval(
                result.aligner, textpipe.models, entries, in_queries, [], k=9
            )
            return rep.precision_in_sample

        filtered_scores = [precision_for(textpipe.samples, seed) for seed in (1, 2, 3)]
        unfiltered_scores = [precision_for(unfiltered, seed) for seed in (1, 2, 3)]
        assert np.mean(filtered_scores) >= np.mean(unfiltered_scores)
        elapsed = time.perf_counter() - start
        assert textpipe.build_seconds + elapsed < 900.0
        report(
            "filtered vs unfiltered captions",
            f"precision@9 filtered {np.mean(filtered_scores):.3f} >= unfiltered "
            f"{np.mean(unfiltered_scores):.3f} over 3 seeds, in {elapsed:.0f}s",
        )


class TestMetricUnits:
    def test_metric_examples(self):
        s = np.array([1.0, 2.0, 3.0])
        assert mape(s, s) == 0.0
        assert mape(np.array([1.1, 1.8]), np.array([1.0, 2.0])) == pytest.approx(0.1, abs=1e-12)
        query = np.array([0.0, 1.0, 0.0, 2.0])
        retrieved = np.array([0.5, 1.1, 0.7, 1.8])
        assert mape(retrieved, query) == pytest.approx((0.1 / 1.0 + 0.2 / 2.0) / 2, abs=1e-12)
        assert math.isnan(mape(np.ones(3), np.zeros(3)))

        a = np.array([1.0, 3.0, 2.0, 5.0])
        assert pearson_corr(a, a) == pytest.approx(1.0, abs=1e-12)
        assert pearson_corr(a, -a) == pytest.approx(-1.0, abs=1e-12)
        rng = np.random.default_rng(1)
        x, y = rng.random(30), rng.random(30)
        n = 30
        textbook = (n * (x * y).sum() - x.sum() * y.sum()) / (
            math.sqrt(n * (x * x).sum() - x.sum() ** 2)
            * math.sqrt(n * (y * y).sum() - y.sum() ** 2)
        )
        assert pearson_corr(x, y) == pytest.approx(textbook, abs=1e-12)
        assert pearson_corr(np.ones(5), np.arange(5.0)) == 0.0

        assert precision_at_k([["up"] * 9] * 3, ["up"] * 3) == 1.0
        assert precision_at_k([["down"] * 9] * 3, ["up"] * 3) == 0.0
        regimes = ("down", "flat", "up")
        lists = [[regimes[rng.integers(3)] for _ in range(9)] for _ in range(1000)]
        wanted = [regimes[rng.integers(3)] for _ in range(1000)]
        assert precision_at_k(lists, wanted) == pytest.approx(1 / 3, abs=0.05)

        assert diversity([["x"]] * 7) == pytest.approx(1 / 7, abs=1e-12)
        assert diversity([["a", "b"], ["c", "d"]]) == 1.0
        assert diversity([["a", "b", "c"], ["b", "c", "d"]]) == pytest.approx(4 / 6, abs=1e-12)
        report("metric unit examples", "mape, pearson, precision@k and diversity exact")


class TestPersistence:
    def test_artifact_round_trips(self, bench, tmp_path):
        index_path = tmp_path / "bench.tslx"
        save_index(bench.ae_index, index_path)
        loaded = load_index(index_path)
        rng = np.random.default_rng(21)
        for _ in range(20):
            q = rng.normal(size=32)
            q /= np.linalg.norm(q)
            assert loaded.query(q, 10).ids() == bench.ae_index.query(q, 10).ids()

        corrupted = bytearray(index_path.read_bytes())
        corrupted[50] ^= 0xFF
        bad_path = tmp_path / "bad.tslx"
        bad_path.write_bytes(bytes(corrupted))
        with pytest.raises(IndexLoadError):
            load_index(bad_path)

        model_path = tmp_path / "trend.enc"
        save_model(bench.models.trend_ae.encoder, model_path)
        restored, _ = load_model(model_path)
        for a, b in zip(
            bench.models.trend_ae.encoder.parameters(), restored.parameters()
        ):
            np.testing.assert_array_equal(a, b)
        raw = bytearray(model_path.read_bytes())
        raw[60] ^= 0x01
        bad_model = tmp_path / "bad.enc"
        bad_model.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_model(bad_model)
        report(
            "persistence",
            "index and checkpoint round-trips ranking-identical; corrupted files rejected",
        )
