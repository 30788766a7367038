"""Trainable encoders: the two sketch-path autoencoders (price trend and
volatility), the combined 32-d embedding, and the text-path contrastive
aligner with its bag-of-words featurizer.

Latent vectors are always L2-normalized, so cosine similarity reduces to a
dot product everywhere downstream.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import VolConfig, volatility_series
from .neuralnet import (
    DenseNet,
    GradCheckReport,
    TrainConfig,
    load_model,
    mse_loss,
    save_model,
)
from .series import Series, VolatilitySeries

DEFAULT_TAU_GRID = (0.05, 0.1, 0.5, 1.0)


class UnmatchableQueryError(ValueError):
    """Query text has no overlap with the training vocabulary."""

    def __init__(self, unknown_tokens: list[str]):
        self.unknown_tokens = unknown_tokens
        super().__init__(
            "query has no in-vocabulary tokens; unknown: "
            + ", ".join(unknown_tokens)
        )


def normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalize each row; all-zero rows map to the first basis vector.

    Returns (normalized, norms) with norms kept for backprop.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    out = x / safe[:, None]
    if np.any(zero):
        out[zero] = 0.0
        out[zero, 0] = 1.0
    if single:
        return out[0], norms
    return out, norms


def normalize_rows_backward(
    z: np.ndarray, norms: np.ndarray, grad: np.ndarray
) -> np.ndarray:
    """Gradient of row normalization: (g - z (z.g)) / norm, zero where the
    input row was zero."""
    inner = np.sum(z * grad, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    out = (grad - z * inner) / safe[:, None]
    out[norms == 0.0] = 0.0
    return out


@dataclass
class AutoencoderModel:
    """Encoder/decoder pair with an L2-normalized latent space."""

    encoder: DenseNet
    decoder: DenseNet

    @property
    def latent_dim(self) -> int:
        return self.encoder.output_dim

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    @classmethod
    def create(
        cls,
        input_dim: int = 30,
        hidden: tuple[int, ...] = (512, 256),
        latent_dim: int = 16,
        seed: int = 0,
    ) -> "AutoencoderModel":
        encoder = DenseNet(
            [input_dim, *hidden, latent_dim], final_linear=False, seed=seed
        )
        decoder = DenseNet(
            [latent_dim, *reversed(hidden), input_dim],
            final_linear=True,
            seed=seed + 1,
        )
        return cls(encoder=encoder, decoder=decoder)

    def encode(self, x: np.ndarray) -> np.ndarray:
        """Encoder forward plus latent normalization."""
        z, _ = normalize_rows(self.encoder.forward(x))
        return z

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self.decoder.forward(self.encode(x))

    def reconstruction_mse(self, x: np.ndarray) -> float:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        loss, _ = mse_loss(self.reconstruct(x), x)
        return loss

    def save(self, path: str | Path, sidecar: dict | None = None) -> None:
        meta = dict(sidecar or {})
        meta["role"] = meta.get("role", "autoencoder")
        save_model(self.encoder, Path(str(path) + ".enc"), sidecar=meta)
        save_model(self.decoder, Path(str(path) + ".dec"), sidecar=meta)

    @classmethod
    def load(cls, path: str | Path) -> tuple["AutoencoderModel", dict]:
        encoder, meta = load_model(Path(str(path) + ".enc"))
        decoder, _ = load_model(Path(str(path) + ".dec"))
        return cls(encoder=encoder, decoder=decoder), meta


def _validate_training_inputs(dataset: np.ndarray, input_dim: int) -> np.ndarray:
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("dataset must be a non-empty 2-D array of series")
    if data.shape[1] != input_dim:
        raise ValueError(
            f"series length {data.shape[1]} does not match model input "
            f"{input_dim}"
        )
    if data.min() < -1e-9 or data.max() > 1.0 + 1e-9:
        raise ValueError("training series must be normalized to [0, 1]")
    return data


@dataclass
class TrainHistory:
    train_mse: list[float]
    val_mse: list[float]

    @property
    def initial(self) -> float:
        return self.train_mse[0]

    @property
    def final(self) -> float:
        return self.train_mse[-1]


def _ae_batch_grads(model: AutoencoderModel, batch: np.ndarray):
    latent_raw, enc_caches = model.encoder.forward_cached(batch)
    z, norms = normalize_rows(latent_raw)
    recon, dec_caches = model.decoder.forward_cached(z)
    loss, dloss = mse_loss(recon, batch)
    dec_grads, dz = model.decoder.backward(dec_caches, dloss)
    dlatent = normalize_rows_backward(z, norms, dz)
    enc_grads, _ = model.encoder.backward(enc_caches, dlatent)
    return loss, enc_grads, dec_grads


def train_autoencoder(
    dataset: np.ndarray,
    config: TrainConfig = TrainConfig(),
    input_dim: int = 30,
    hidden: tuple[int, ...] = (512, 256),
    latent_dim: int = 16,
) -> tuple[AutoencoderModel, TrainHistory]:
    """Fit an autoencoder to length-``input_dim`` series by reconstruction
    MSE, holding out ``validation_fraction`` of rows for monitoring.

    The loss history starts with the pre-training epoch-0 evaluation, so
    ``history.initial`` is the untrained reconstruction error.
    """
    data = _validate_training_inputs(dataset, input_dim)
    model = AutoencoderModel.create(
        input_dim=input_dim, hidden=hidden, latent_dim=latent_dim, seed=config.seed
    )
    rng = np.random.default_rng(config.seed + 2)
    order = rng.permutation(data.shape[0])
    n_val = int(round(data.shape[0] * config.validation_fraction))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if train_idx.size == 0:
        raise ValueError("validation split leaves no training rows")
    train, val = data[train_idx], data[val_idx]

    enc_opt = config.make_optimizer()
    dec_opt = config.make_optimizer()

    def evaluate(rows: np.ndarray) -> float:
        if rows.shape[0] == 0:
            return float("nan")
        return model.reconstruction_mse(rows)

    history = TrainHistory(train_mse=[evaluate(train)], val_mse=[evaluate(val)])
    n_train = train.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            _, enc_grads, dec_grads = _ae_batch_grads(model, train[idx])
            enc_opt.step(model.encoder, enc_grads)
            dec_opt.step(model.decoder, dec_grads)
        history.train_mse.append(evaluate(train))
        history.val_mse.append(evaluate(val))
    return model, history


def _ae_loss_and_pattern(
    model: AutoencoderModel, batch: np.ndarray
) -> tuple[float, np.ndarray]:
    """Reconstruction loss plus the ReLU on/off pattern of the whole
    pipeline (final linear decoder layer excluded)."""
    latent_raw, enc_caches = model.encoder.forward_cached(batch)
    z, norms = normalize_rows(latent_raw)
    recon, dec_caches = model.decoder.forward_cached(z)
    loss, _ = mse_loss(recon, batch)
    masks = [(c > 0).ravel() for c in enc_caches[1:]]
    masks.extend((c > 0).ravel() for c in dec_caches[1:-1])
    masks.append(norms == 0)
    return loss, np.concatenate(masks)


def autoencoder_gradient_check(
    model: AutoencoderModel,
    batch: np.ndarray,
    n_probes: int = 25,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    seed: int = 0,
) -> GradCheckReport:
    """Finite-difference check of the full reconstruction pipeline
    (encoder, latent normalization, decoder, MSE) over sampled parameters
    of both networks.

    The map is piecewise smooth: a probe is only valid when the ReLU
    activation pattern is identical at both perturbed points (a kink inside
    the step makes the central difference measure the wrong quantity), so
    kink-straddling probes are redrawn.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    rng = np.random.default_rng(seed)
    _, enc_grads, dec_grads = _ae_batch_grads(model, batch)
    params = model.encoder.parameters() + model.decoder.parameters()
    flat_grads = [g for pair in enc_grads for g in pair] + [
        g for pair in dec_grads for g in pair
    ]
    max_err = 0.0
    done = 0
    attempts = 0
    while done < n_probes and attempts < 50 * n_probes:
        attempts += 1
        pi = int(rng.integers(len(params)))
        p = params[pi]
        ci = int(rng.integers(p.size))
        original = p.flat[ci]
        p.flat[ci] = original + step
        loss_plus, pattern_plus = _ae_loss_and_pattern(model, batch)
        p.flat[ci] = original - step
        loss_minus, pattern_minus = _ae_loss_and_pattern(model, batch)
        p.flat[ci] = original
        if not np.array_equal(pattern_plus, pattern_minus):
            continue
        numeric = (loss_plus - loss_minus) / (2 * step)
        analytic = flat_grads[pi].flat[ci]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        max_err = max(max_err, abs(numeric - analytic) / denom)
        done += 1
    return GradCheckReport(
        max_relative_error=max_err, n_probes=done, tolerance=tolerance
    )


def encode_trend(model: AutoencoderModel, s: Series) -> np.ndarray:
    if not s.normalized:
        raise ValueError("trend encoder expects a normalized series")
    if len(s) != model.input_dim:
        raise ValueError(
            f"series length {len(s)} does not match encoder input {model.input_dim}"
        )
    return model.encode(s.values)


def encode_vol(model: AutoencoderModel, v: VolatilitySeries) -> np.ndarray:
    if len(v) != model.input_dim:
        raise ValueError(
            f"volatility length {len(v)} does not match encoder input "
            f"{model.input_dim}"
        )
    return model.encode(v.values)


@dataclass
class SketchEncoders:
    """The frozen model pair behind the combined sketch embedding."""

    trend_ae: AutoencoderModel
    vol_ae: AutoencoderModel
    vol_config: VolConfig = VolConfig()

    @property
    def embedding_dim(self) -> int:
        return self.trend_ae.latent_dim + self.vol_ae.latent_dim


def combined_embedding(models: SketchEncoders, s: Series) -> np.ndarray:
    """Concatenate the two unit latents, rescaled back to unit norm."""
    vol = volatility_series(s, models.vol_config)
    t_part = encode_trend(models.trend_ae, s)
    v_part = encode_vol(models.vol_ae, vol)
    return np.concatenate([t_part, v_part]) / np.sqrt(2.0)


def combined_embedding_batch(
    models: SketchEncoders, series_matrix: np.ndarray, vol_matrix: np.ndarray
) -> np.ndarray:
    """Vectorized combined embeddings for pre-stacked inputs."""
    t_part, _ = normalize_rows(models.trend_ae.encoder.forward(series_matrix))
    v_part, _ = normalize_rows(models.vol_ae.encoder.forward(vol_matrix))
    return np.hstack([t_part, v_part]) / np.sqrt(2.0)


# ---------------------------------------------------------------------------
# Contrastive alignment
# ---------------------------------------------------------------------------


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def contrastive_loss(
    text_embs: np.ndarray,
    series_embs: np.ndarray,
    tau: float,
    literal_target_temperature: bool = False,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Symmetric soft-target cross-entropy between the two modalities.

    Cross-modal logits are the scaled similarities T V^T / tau; the target
    distribution is the row softmax of the averaged uni-modal similarities.
    With ``literal_target_temperature`` the target logits are divided by tau
    a second time. Returns the loss and its exact gradients w.r.t. both
    batches (the target's dependence on the inputs included).
    """
    t = np.asarray(text_embs, dtype=np.float64)
    v = np.asarray(series_embs, dtype=np.float64)
    if t.ndim != 2 or v.ndim != 2 or t.shape != v.shape:
        raise ValueError(f"batch shapes must match, got {t.shape} and {v.shape}")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    n = t.shape[0]
    if n < 1:
        raise ValueError("batch must contain at least one pair")

    target_scale = 1.0 / (2.0 * tau * tau) if literal_target_temperature else 1.0 / (
        2.0 * tau
    )
    cross = t @ v.T / tau
    target_logits = (t @ t.T + v @ v.T) * target_scale

    log_q = _log_softmax_rows(cross)
    log_r = _log_softmax_rows(cross.T)
    log_p = _log_softmax_rows(target_logits)
    p = np.exp(log_p)
    q = np.exp(log_q)
    r = np.exp(log_r)

    ce_text = -(p * log_q).sum() / n
    ce_series = -(p.T * log_r).sum() / n
    loss = 0.5 * (ce_text + ce_series)

    # gradient w.r.t. the cross-modal logits
    col_weight = p.sum(axis=0)
    d_cross = 0.5 * ((q - p) + (col_weight[:, None] * r - p.T).T) / n
    # gradient w.r.t. the target distribution, then through its softmax
    d_p = -0.5 * (log_q + log_r.T) / n
    d_target_logits = p * (d_p - (d_p * p).sum(axis=1, keepdims=True))

    sym = d_target_logits + d_target_logits.T
    grad_t = d_cross @ v / tau + sym @ t * target_scale
    grad_v = d_cross.T @ t / tau + sym @ v * target_scale
    return float(loss), grad_t, grad_v


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class TextVocab:
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def index(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def from_corpus(cls, captions: list[str]) -> "TextVocab":
        seen: set[str] = set()
        for caption in captions:
            seen.update(tokenize(caption))
        return cls(tokens=tuple(sorted(seen)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TextVocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tokens=tuple(line for line in lines if line))


def featurize_text(vocab: TextVocab, text: str) -> tuple[np.ndarray, list[str]]:
    """L2-normalized token-count vector over the vocabulary.

    Out-of-vocabulary tokens are dropped and reported; a fully
    out-of-vocabulary text yields the zero vector (unmatchable).
    """
    lookup = vocab.index
    counts = np.zeros(len(vocab), dtype=np.float64)
    unknown: list[str] = []
    for token in tokenize(text):
        pos = lookup.get(token)
        if pos is None:
            unknown.append(token)
        else:
            counts[pos] += 1.0
    norm = np.linalg.norm(counts)
    if norm > 0:
        counts /= norm
    return counts, unknown


@dataclass
class Aligner:
    """Projection heads mapping text features and combined series embeddings
    into a shared 64-d space."""

    vocab: TextVocab
    text_head: DenseNet
    series_head: DenseNet
    tau: float

    @property
    def shared_dim(self) -> int:
        return self.text_head.output_dim

    def save(self, path: str | Path, sidecar: dict | None = None) -> None:
        meta = dict(sidecar or {})
        meta["tau"] = self.tau
        save_model(self.text_head, Path(str(path) + ".text"), sidecar=meta)
        save_model(self.series_head, Path(str(path) + ".series"), sidecar=meta)
        self.vocab.save(Path(str(path) + ".vocab"))

    @classmethod
    def load(cls, path: str | Path) -> "Aligner":
        text_head, meta = load_model(Path(str(path) + ".text"))
        series_head, _ = load_model(Path(str(path) + ".series"))
        vocab = TextVocab.load(Path(str(path) + ".vocab"))
        return cls(
            vocab=vocab,
            text_head=text_head,
            series_head=series_head,
            tau=float(meta["tau"]),
        )


def embed_text_query(aligner: Aligner, text: str) -> np.ndarray:
    vector, unknown = featurize_text(aligner.vocab, text)
    if not np.any(vector):
        raise UnmatchableQueryError(unknown)
    out, _ = normalize_rows(aligner.text_head.forward(vector))
    return out


def embed_series_for_text(
    aligner: Aligner, models: SketchEncoders, s: Series
) -> np.ndarray:
    emb = combined_embedding(models, s)
    out, _ = normalize_rows(aligner.series_head.forward(emb))
    return out


def embed_series_for_text_batch(
    aligner: Aligner, combined: np.ndarray
) -> np.ndarray:
    out, _ = normalize_rows(aligner.series_head.forward(combined))
    return out


@dataclass
class AlignerTrainResult:
    aligner: Aligner
    chosen_tau: float
    tau_losses: dict[float, float]
    train_history: list[float] = field(repr=False, default_factory=list)


def _train_heads_once(
    text_features: np.ndarray,
    series_features: np.ndarray,
    tau: float,
    config: TrainConfig,
    shared_dim: int,
    literal_target_temperature: bool,
) -> tuple[DenseNet, DenseNet, list[float]]:
    n, vocab_dim = text_features.shape
    text_head = DenseNet([vocab_dim, shared_dim], final_linear=True, seed=config.seed)
    series_head = DenseNet(
        [series_features.shape[1], shared_dim], final_linear=True, seed=config.seed + 1
    )
    text_opt = config.make_optimizer()
    series_opt = config.make_optimizer()
    rng = np.random.default_rng(config.seed + 2)
    history: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            if idx.size < 2:
                continue
            t_raw, t_caches = text_head.forward_cached(text_features[idx])
            v_raw, v_caches = series_head.forward_cached(series_features[idx])
            t_emb, t_norms = normalize_rows(t_raw)
            v_emb, v_norms = normalize_rows(v_raw)
            loss, grad_t, grad_v = contrastive_loss(
                t_emb, v_emb, tau, literal_target_temperature
            )
            d_t = normalize_rows_backward(t_emb, t_norms, grad_t)
            d_v = normalize_rows_backward(v_emb, v_norms, grad_v)
            t_grads, _ = text_head.backward(t_caches, d_t)
            v_grads, _ = series_head.backward(v_caches, d_v)
            text_opt.step(text_head, t_grads)
            series_opt.step(series_head, v_grads)
            epoch_loss += loss
            n_batches += 1
        history.append(epoch_loss / max(n_batches, 1))
    return text_head, series_head, history


def _alignment_loss(
    text_head: DenseNet,
    series_head: DenseNet,
    text_features: np.ndarray,
    series_features: np.ndarray,
    tau: float,
    literal_target_temperature: bool,
) -> float:
    t_emb, _ = normalize_rows(text_head.forward(text_features))
    v_emb, _ = normalize_rows(series_head.forward(series_features))
    loss, _, _ = contrastive_loss(t_emb, v_emb, tau, literal_target_temperature)
    return loss


def train_aligner(
    pairs: list[tuple[str, Series]],
    models: SketchEncoders,
    config: TrainConfig = TrainConfig(),
    tau_grid: tuple[float, ...] = DEFAULT_TAU_GRID,
    shared_dim: int = 64,
    literal_target_temperature: bool = False,
    clause_pair_fraction: float = 0.0,
) -> AlignerTrainResult:
    """Train both projection heads with the contrastive loss, selecting the
    temperature on the held-out split.

    The series side is the frozen combined embedding; only the heads move.
    ``clause_pair_fraction`` additionally pairs each training series with
    its individual caption clauses at the given rate, anchoring short
    query-style text against the series directly (full captions only
    constrain token vectors relative to each other).
    """
    if len(pairs) < 2:
        raise ValueError("need at least 2 (caption, series) pairs")
    if not 0.0 <= clause_pair_fraction <= 1.0:
        raise ValueError("clause_pair_fraction must lie in [0, 1]")
    if len({caption for caption, _ in pairs}) < 2:
        warnings.warn("caption corpus has a single distinct caption", stacklevel=2)

    rng = np.random.default_rng(config.seed + 3)
    order = rng.permutation(len(pairs))
    n_val = int(round(len(pairs) * config.validation_fraction))
    val_idx, train_idx = order[:n_val], order[n_val:]

    train_captions = [pairs[i][0] for i in train_idx]
    vocab = TextVocab.from_corpus(train_captions)
    if len(vocab) == 0:
        raise ValueError("training captions produced an empty vocabulary")

    text_features = np.vstack(
        [featurize_text(vocab, caption)[0] for caption, _ in pairs]
    )
    series_features = np.vstack(
        [combined_embedding(models, series) for _, series in pairs]
    )

    train_texts = text_features[train_idx]
    train_series = series_features[train_idx]
    if clause_pair_fraction > 0.0:
        clause_rng = np.random.default_rng(config.seed + 4)
        extra_texts, extra_rows = [], []
        for i in train_idx:
            for clause in pairs[i][0].split(", "):
                if clause_rng.random() < clause_pair_fraction:
                    extra_texts.append(featurize_text(vocab, clause)[0])
                    extra_rows.append(i)
        if extra_texts:
            train_texts = np.vstack([train_texts, np.vstack(extra_texts)])
            train_series = np.vstack([train_series, series_features[extra_rows]])

    tau_losses: dict[float, float] = {}
    best: tuple[float, DenseNet, DenseNet, list[float]] | None = None
    for tau in tau_grid:
        text_head, series_head, history = _train_heads_once(
            train_texts,
            train_series,
            tau,
            config,
            shared_dim,
            literal_target_temperature,
        )
        if val_idx.size >= 2:
            score = _alignment_loss(
                text_head,
                series_head,
                text_features[val_idx],
                series_features[val_idx],
                tau,
                literal_target_temperature,
            )
        else:
            score = history[-1]
        tau_losses[tau] = score
        if best is None or score < tau_losses[best[0]]:
            best = (tau, text_head, series_head, history)

    assert best is not None
    chosen_tau, text_head, series_head, history = best
    aligner = Aligner(
        vocab=vocab, text_head=text_head, series_head=series_head, tau=chosen_tau
    )
    return AlignerTrainResult(
        aligner=aligner,
        chosen_tau=chosen_tau,
        tau_losses=tau_losses,
        train_history=history,
    )
