"""Latent-space storage and multi-modal retrieval for financial time
series: sketch queries through paired autoencoder embeddings, text queries
through a contrastively aligned shared space."""

from .baselines import RawDatabase, bf_avg_search, bf_search, fit_pca, pca_embed
from .encoders import (
    Aligner,
    AutoencoderModel,
    SketchEncoders,
    combined_embedding,
    contrastive_loss,
    embed_series_for_text,
    embed_text_query,
    train_aligner,
    train_autoencoder,
)
from .features import (
    VolConfig,
    add_gaussian_noise,
    circular_shift_right,
    minmax_normalize,
    volatility_series,
)
from .index import QueryResult, VectorIndex, load_index, save_index
from .series import RegimeLabels, Series, VolatilitySeries
from .synthgen import GenParams, PhraseBank, generate, make_dataset

__version__ = "0.1.0"

__all__ = [
    "Aligner",
    "AutoencoderModel",
    "GenParams",
    "PhraseBank",
    "QueryResult",
    "RawDatabase",
    "RegimeLabels",
    "Series",
    "SketchEncoders",
    "VectorIndex",
    "VolConfig",
    "VolatilitySeries",
    "add_gaussian_noise",
    "bf_avg_search",
    "bf_search",
    "circular_shift_right",
    "combined_embedding",
    "contrastive_loss",
    "embed_series_for_text",
    "embed_text_query",
    "fit_pca",
    "generate",
    "load_index",
    "make_dataset",
    "minmax_normalize",
    "pca_embed",
    "save_index",
    "train_aligner",
    "train_autoencoder",
    "volatility_series",
]
