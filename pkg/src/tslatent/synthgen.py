"""Synthetic price-series generation with regime labelling and captions.

Series follow a discrete mean-reverting recursion around a long-run level,
with optional per-step drift and rare large shocks. Each generated series
carries categorical regime labels (trend / volatility / shock / liquidity)
that are realized as short natural-language captions drawn from phrase
banks. Labels can either reflect the generating parameters directly
("unfiltered") or be re-derived from the realized series through
deterministic filters ("filtered"), which keeps captions consistent with
how the series actually looks after normalization.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .features import minmax_normalize
from .series import FEATURES, REGIMES_BY_FEATURE, RegimeLabels, Series


class PhraseBankError(ValueError):
    """A caption was requested for a regime with no phrases configured."""


@dataclass(frozen=True)
class GenParams:
    """Parameters of the mean-reverting generator.

    ``r_bar`` is the long-run level, ``kappa`` the reversion rate,
    ``sigma`` the per-step noise std, ``trend`` a per-step drift, and
    megashocks of std ``sigma_shock`` arrive independently each step with
    probability ``shock_prob``.
    """

    r_bar: float = 100.0
    kappa: float = 0.05
    sigma: float = 1.0
    trend: float = 0.0
    shock_prob: float = 0.0
    sigma_shock: float = 0.0
    length: int = 30
    seed: int = 0

    def __post_init__(self) -> None:
        if self.r_bar <= 0:
            raise ValueError("r_bar must be positive")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 0.0 <= self.shock_prob <= 1.0:
            raise ValueError("shock_prob must lie in [0, 1]")
        if self.length < 2:
            raise ValueError("length must be at least 2")
        if self.shock_prob > 0 and self.sigma_shock <= self.sigma:
            raise ValueError("sigma_shock must exceed sigma when shocks are enabled")


def generate(params: GenParams, series_id: str = "syn") -> Series:
    """Run the mean-reverting recursion and return the raw price series.

    Each step applies reversion toward ``r_bar``, adds noise, drift and any
    shock, then clamps at zero. Draw order per step is fixed (noise, shock
    indicator, shock magnitude) so a seed fully determines the output.
    """
    rng = np.random.default_rng(params.seed)
    values = np.empty(params.length, dtype=np.float64)
    values[0] = params.r_bar
    pull = params.kappa * params.r_bar
    keep = 1.0 - params.kappa
    for t in range(1, params.length):
        u = rng.normal(0.0, params.sigma) if params.sigma > 0 else 0.0
        shock = 0.0
        if params.shock_prob > 0:
            if rng.random() < params.shock_prob:
                shock = rng.normal(0.0, params.sigma_shock)
        values[t] = max(0.0, pull + keep * values[t - 1] + u + params.trend + shock)
    return Series(id=series_id, values=values)


@dataclass(frozen=True)
class FilterConfig:
    """Thresholds for the regime filters, all on [0, 1]-normalized series.

    ``trend_threshold_scale`` is divided by the series length to give the
    slope threshold. ``relabel_volatility`` controls whether the filtered
    pipeline also re-derives the volatility regime (off by default; the
    synthetic pipeline re-labels trend and shock only).
    """

    trend_threshold_scale: float = 0.2
    shock_threshold: float = 0.25
    vol_low_cut: float = 0.02
    vol_high_cut: float = 0.06
    relabel_volatility: bool = False

    def __post_init__(self) -> None:
        if self.trend_threshold_scale <= 0:
            raise ValueError("trend_threshold_scale must be positive")
        if self.shock_threshold <= 0:
            raise ValueError("shock_threshold must be positive")
        if not 0 < self.vol_low_cut < self.vol_high_cut:
            raise ValueError("volatility cuts must satisfy 0 < low < high")

    def trend_threshold(self, length: int) -> float:
        return self.trend_threshold_scale / length


def _require_normalized(s: Series) -> None:
    if not s.normalized:
        raise ValueError("regime filters expect a normalized series")


def label_trend(s: Series, threshold: float) -> str:
    """Classify trend from the least-squares slope of value against index."""
    _require_normalized(s)
    n = len(s)
    idx = np.arange(n, dtype=np.float64)
    slope = float(np.polyfit(idx, s.values, 1)[0])
    if slope > threshold:
        return "up"
    if slope < -threshold:
        return "down"
    return "flat"


def label_shock(s: Series, threshold: float) -> str:
    """Shocked iff any one-step move exceeds the threshold magnitude."""
    _require_normalized(s)
    max_step = float(np.abs(np.diff(s.values)).max())
    return "shocked" if max_step > threshold else "unshocked"


def volatility_score(s: Series) -> float:
    """Mean absolute deviation of each point from the expanding mean of the
    points before it."""
    _require_normalized(s)
    # anchor at the first sample so constant series score exactly zero
    x = s.values - s.values[0]
    running_mean = np.cumsum(x)[:-1] / np.arange(1, len(s), dtype=np.float64)
    return float(np.abs(x[1:] - running_mean).mean())


def label_volatility(s: Series, thresholds: tuple[float, float]) -> str:
    low_cut, high_cut = thresholds
    if not 0 < low_cut < high_cut:
        raise ValueError("volatility cuts must satisfy 0 < low < high")
    score = volatility_score(s)
    if score < low_cut:
        return "low"
    if score >= high_cut:
        return "high"
    return "medium"


def filter_labels(s: Series, labels: RegimeLabels, cfg: FilterConfig) -> RegimeLabels:
    """Re-derive trend and shock regimes (and optionally volatility) from a
    normalized series, keeping the remaining labels."""
    trend = label_trend(s, cfg.trend_threshold(len(s)))
    shock = label_shock(s, cfg.shock_threshold)
    volatility = labels.volatility
    if cfg.relabel_volatility:
        volatility = label_volatility(s, (cfg.vol_low_cut, cfg.vol_high_cut))
    return RegimeLabels.from_regimes(trend, volatility, shock)


@dataclass(frozen=True)
class PhraseBank:
    """Phrases available per (feature, regime), keyed by feature then regime."""

    entries: dict[str, dict[str, tuple[str, ...]]]

    def phrases(self, feature: str, regime: str) -> tuple[str, ...]:
        try:
            bank = self.entries[feature][regime]
        except KeyError:
            raise PhraseBankError(
                f"phrase bank has no entry for feature {feature!r}, regime {regime!r}"
            ) from None
        if not bank:
            raise PhraseBankError(
                f"phrase bank entry for {feature!r}/{regime!r} is empty"
            )
        return bank

    def total_phrases(self) -> int:
        return sum(
            len(phrases)
            for regimes in self.entries.values()
            for phrases in regimes.values()
        )


def load_phrase_bank(directory: str | Path) -> PhraseBank:
    """Load ``<feature>_<regime>.txt`` files (one phrase per line, UTF-8)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise PhraseBankError(f"phrase bank directory not found: {directory}")
    entries: dict[str, dict[str, tuple[str, ...]]] = {}
    for feature in FEATURES:
        for regime in REGIMES_BY_FEATURE[feature]:
            path = directory / f"{feature}_{regime}.txt"
            if not path.is_file():
                continue
            lines = [
                line.strip()
                for line in path.read_text(encoding="utf-8").splitlines()
            ]
            phrases = tuple(line for line in lines if line)
            if phrases:
                entries.setdefault(feature, {})[regime] = phrases
    if not entries:
        raise PhraseBankError(f"no phrase files found in {directory}")
    return PhraseBank(entries=entries)


def builtin_phrase_bank(name: str = "default") -> PhraseBank:
    """Load one of the phrase banks shipped with the package."""
    root = importlib.resources.files("tslatent").joinpath("phrases").joinpath(name)
    with importlib.resources.as_file(root) as path:
        return load_phrase_bank(path)


def generate_caption(labels: RegimeLabels, bank: PhraseBank, seed: int) -> str:
    """One uniformly sampled phrase per feature, comma-joined in the fixed
    order trend, volatility, shock, liquidity."""
    rng = np.random.default_rng(seed)
    clauses = []
    for feature in FEATURES:
        phrases = bank.phrases(feature, labels.feature(feature))
        clauses.append(phrases[int(rng.integers(len(phrases)))])
    return ", ".join(clauses)


@dataclass(frozen=True)
class GridCell:
    """One regime combination and the generator parameters realizing it."""

    trend_regime: str
    vol_regime: str
    shock_regime: str
    params: GenParams

    def labels(self) -> RegimeLabels:
        return RegimeLabels.from_regimes(
            self.trend_regime, self.vol_regime, self.shock_regime
        )


TREND_VALUES = {"down": -1.2, "flat": 0.0, "up": 1.2}
SIGMA_VALUES = {"low": 0.3, "medium": 0.9, "high": 2.7}
SHOCK_VALUES = {"unshocked": (0.0, 0.0), "shocked": (0.08, 18.0)}


def default_grid(
    r_bar: float = 100.0, kappa: float = 0.05, length: int = 30
) -> list[GridCell]:
    """The full 3x3x2 regime grid with calibrated parameter values."""
    cells = []
    for trend_regime, trend in TREND_VALUES.items():
        for vol_regime, sigma in SIGMA_VALUES.items():
            for shock_regime, (p, sigma_shock) in SHOCK_VALUES.items():
                cells.append(
                    GridCell(
                        trend_regime=trend_regime,
                        vol_regime=vol_regime,
                        shock_regime=shock_regime,
                        params=GenParams(
                            r_bar=r_bar,
                            kappa=kappa,
                            sigma=sigma,
                            trend=trend,
                            shock_prob=p,
                            sigma_shock=sigma_shock,
                            length=length,
                        ),
                    )
                )
    return cells


def benchmark_grid(r_bar: float = 100.0, length: int = 30) -> list[GridCell]:
    """Structured series for retrieval benchmarks: strong trends at mixed
    reversion speeds with frequent megashocks, so every window carries both
    a clear shape and intra-window volatility structure."""
    cells = []
    for trend_regime, trend in (
        ("down", -2.0),
        ("down", -1.0),
        ("up", 1.0),
        ("up", 2.0),
    ):
        for vol_regime, sigma in (("low", 0.4), ("medium", 1.0)):
            for kappa in (0.05, 0.2):
                cells.append(
                    GridCell(
                        trend_regime=trend_regime,
                        vol_regime=vol_regime,
                        shock_regime="shocked",
                        params=GenParams(
                            r_bar=r_bar,
                            kappa=kappa,
                            sigma=sigma,
                            trend=trend,
                            shock_prob=0.1,
                            sigma_shock=10.0,
                            length=length,
                        ),
                    )
                )
    return cells


def text_grid(r_bar: float = 100.0, length: int = 30) -> list[GridCell]:
    """Captioned-dataset grid keeping every labelled regime visible after
    per-window normalization.

    Noise level is only recognizable relative to the window's own range, so
    each volatility regime is realized as a distinct shape family: fast
    plateaus (low), clean trends with light noise (medium), and
    noise-dominated windows (high, the only family containing flats). Low
    and medium cells are listed twice to balance class sizes against the
    three-trend high family.
    """
    cells: list[GridCell] = []
    for shock_regime, (p, sigma_shock) in (
        ("unshocked", (0.0, 0.0)),
        ("shocked", (0.1, 14.0)),
    ):
        for trend_regime, trend in (("down", -6.0), ("up", 6.0)):
            cell = GridCell(
                trend_regime=trend_regime,
                vol_regime="low",
                shock_regime=shock_regime,
                params=GenParams(
                    r_bar=r_bar, kappa=0.6, sigma=0.15, trend=trend,
                    shock_prob=p, sigma_shock=sigma_shock, length=length,
                ),
            )
            cells.extend((cell, cell))
        for trend_regime, trend in (("down", -1.2), ("up", 1.2)):
            cell = GridCell(
                trend_regime=trend_regime,
                vol_regime="medium",
                shock_regime=shock_regime,
                params=GenParams(
                    r_bar=r_bar, kappa=0.05, sigma=0.9, trend=trend,
                    shock_prob=p, sigma_shock=sigma_shock, length=length,
                ),
            )
            cells.extend((cell, cell))
        for trend_regime, trend in (("down", -1.2), ("flat", 0.0), ("up", 1.2)):
            cells.append(
                GridCell(
                    trend_regime=trend_regime,
                    vol_regime="high",
                    shock_regime=shock_regime,
                    params=GenParams(
                        r_bar=r_bar, kappa=0.05, sigma=4.5, trend=trend,
                        shock_prob=p, sigma_shock=sigma_shock, length=length,
                    ),
                )
            )
    return cells


GRIDS = {"default": default_grid, "benchmark": benchmark_grid, "text": text_grid}


@dataclass
class DatasetSample:
    series: Series
    labels: RegimeLabels
    caption: str
    grid_labels: RegimeLabels = field(repr=False, default=None)  # type: ignore[assignment]


def make_dataset(
    n: int,
    grid: list[GridCell] | None = None,
    bank: PhraseBank | None = None,
    filter_mode: str = "filtered",
    seed: int = 0,
    filter_config: FilterConfig = FilterConfig(),
    id_prefix: str = "syn",
) -> list[DatasetSample]:
    """Generate ``n`` labelled, captioned series cycling through the grid.

    In ``unfiltered`` mode labels come from the generating parameters; in
    ``filtered`` mode trend and shock (and volatility when configured) are
    re-derived from the realized series before captions are drawn.
    """
    if n < 1:
        raise ValueError("dataset size must be at least 1")
    if filter_mode not in ("unfiltered", "filtered"):
        raise ValueError(f"unknown filter mode: {filter_mode!r}")
    if grid is None:
        grid = default_grid()
    if not grid:
        raise ValueError("parameter grid must be non-empty")
    if bank is None:
        bank = builtin_phrase_bank()

    master = np.random.default_rng(seed)
    samples: list[DatasetSample] = []
    for i in range(n):
        cell = grid[i % len(grid)]
        gen_seed = int(master.integers(2**63))
        caption_seed = int(master.integers(2**63))
        params = replace(cell.params, seed=gen_seed)
        series = generate(params, series_id=f"{id_prefix}-{i:06d}")
        grid_labels = cell.labels()
        if filter_mode == "filtered":
            labels = filter_labels(minmax_normalize(series), grid_labels, filter_config)
        else:
            labels = grid_labels
        caption = generate_caption(labels, bank, caption_seed)
        samples.append(
            DatasetSample(
                series=series,
                labels=labels,
                caption=caption,
                grid_labels=grid_labels,
            )
        )
    return samples
