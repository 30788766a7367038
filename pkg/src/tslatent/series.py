"""Shared series and regime-label types used across the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TREND_REGIMES = ("down", "flat", "up")
VOLATILITY_REGIMES = ("low", "medium", "high")
SHOCK_REGIMES = ("shocked", "unshocked")
LIQUIDITY_REGIMES = ("low", "high")

FEATURES = ("trend", "volatility", "shock", "liquidity")

REGIMES_BY_FEATURE = {
    "trend": TREND_REGIMES,
    "volatility": VOLATILITY_REGIMES,
    "shock": SHOCK_REGIMES,
    "liquidity": LIQUIDITY_REGIMES,
}


def liquidity_for_volatility(vol_regime: str) -> str:
    """Map a volatility regime to its liquidity counterpart.

    High volatility implies low liquidity and vice versa; medium volatility
    is assigned low liquidity.
    """
    if vol_regime not in VOLATILITY_REGIMES:
        raise ValueError(f"unknown volatility regime: {vol_regime!r}")
    return "high" if vol_regime == "low" else "low"


@dataclass(frozen=True)
class RegimeLabels:
    """Per-feature categorical regimes for one series."""

    trend: str
    volatility: str
    shock: str
    liquidity: str

    def __post_init__(self) -> None:
        checks = (
            ("trend", self.trend, TREND_REGIMES),
            ("volatility", self.volatility, VOLATILITY_REGIMES),
            ("shock", self.shock, SHOCK_REGIMES),
            ("liquidity", self.liquidity, LIQUIDITY_REGIMES),
        )
        for name, value, allowed in checks:
            if value not in allowed:
                raise ValueError(f"unknown {name} regime: {value!r}")
        if self.liquidity != liquidity_for_volatility(self.volatility):
            raise ValueError(
                f"liquidity {self.liquidity!r} inconsistent with volatility "
                f"{self.volatility!r}"
            )

    @classmethod
    def from_regimes(cls, trend: str, volatility: str, shock: str) -> "RegimeLabels":
        return cls(
            trend=trend,
            volatility=volatility,
            shock=shock,
            liquidity=liquidity_for_volatility(volatility),
        )

    def feature(self, name: str) -> str:
        if name not in FEATURES:
            raise ValueError(f"unknown feature: {name!r}")
        return getattr(self, name)

    def as_dict(self) -> dict[str, str]:
        return {name: getattr(self, name) for name in FEATURES}


@dataclass
class Series:
    """Fixed-length univariate price vector, optionally min-max normalized.

    ``norm_min``/``norm_max`` record the pre-normalization extrema so a
    normalized series can be mapped back to price units.
    """

    id: str
    values: np.ndarray
    normalized: bool = False
    norm_min: float | None = None
    norm_max: float | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("series values must be one-dimensional")
        if self.values.size < 2:
            raise ValueError("series must have at least 2 samples")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"series {self.id!r} contains non-finite values")
        if self.normalized:
            if self.values.min() < -1e-12 or self.values.max() > 1.0 + 1e-12:
                raise ValueError(f"normalized series {self.id!r} outside [0, 1]")

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass
class VolatilitySeries:
    """Sliding-window standard deviation derived from a normalized series."""

    source_id: str
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("volatility values must be one-dimensional")
        if np.any(self.values < -1e-12):
            raise ValueError("volatility values must be non-negative")

    def __len__(self) -> int:
        return int(self.values.size)
