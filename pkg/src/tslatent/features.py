"""Model-input derivations: normalization, the volatility series, and the
query perturbations used by the evaluation harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .series import Series, VolatilitySeries


@dataclass(frozen=True)
class VolConfig:
    """Half-window for the sliding volatility estimate."""

    half_window: int = 4

    def validate_for_length(self, length: int) -> None:
        if self.half_window < 1 or 2 * self.half_window >= length:
            raise ValueError(
                f"half_window must satisfy 1 <= m < L/2, got m={self.half_window} "
                f"for L={length}"
            )


def minmax_normalize(s: Series) -> Series:
    """Rescale values to [0, 1], recording the original extrema.

    A constant series maps to all 0.5 (the degenerate case where the range
    is zero).
    """
    lo = float(s.values.min())
    hi = float(s.values.max())
    if hi > lo:
        scaled = (s.values - lo) / (hi - lo)
    else:
        scaled = np.full_like(s.values, 0.5)
    return Series(id=s.id, values=scaled, normalized=True, norm_min=lo, norm_max=hi)


def denormalize(s: Series) -> Series:
    if not s.normalized or s.norm_min is None or s.norm_max is None:
        raise ValueError("series carries no normalization metadata")
    values = s.values * (s.norm_max - s.norm_min) + s.norm_min
    return Series(id=s.id, values=values, normalized=False)


def volatility_series(s: Series, cfg: VolConfig = VolConfig()) -> VolatilitySeries:
    """Population std of the window [i-m, i+m), clamped at the boundaries.

    The clamping keeps the output the same length as the input, at the cost
    of smaller effective windows near both ends.
    """
    if not s.normalized:
        raise ValueError("volatility series requires a normalized input")
    n = len(s)
    cfg.validate_for_length(n)
    m = cfg.half_window
    out = np.empty(n, dtype=np.float64)
    # interior windows all have size 2m; compute them in one vectorized pass
    interior = np.lib.stride_tricks.sliding_window_view(s.values, 2 * m)
    out[m : n - m + 1] = interior.std(axis=1)
    for i in range(m):
        out[i] = s.values[: i + m].std()
    for i in range(n - m + 1, n):
        out[i] = s.values[i - m :].std()
    return VolatilitySeries(source_id=s.id, values=out)


def minmax_matrix(rows: np.ndarray) -> np.ndarray:
    """Row-wise min-max normalization; constant rows map to 0.5."""
    rows = np.asarray(rows, dtype=np.float64)
    lo = rows.min(axis=1, keepdims=True)
    hi = rows.max(axis=1, keepdims=True)
    span = hi - lo
    out = np.where(span > 0, (rows - lo) / np.where(span > 0, span, 1.0), 0.5)
    return out


def volatility_matrix(rows: np.ndarray, cfg: VolConfig = VolConfig()) -> np.ndarray:
    """Row-wise twin of :func:`volatility_series` for stacked inputs."""
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[1]
    cfg.validate_for_length(n)
    m = cfg.half_window
    out = np.empty_like(rows)
    interior = np.lib.stride_tricks.sliding_window_view(rows, 2 * m, axis=1)
    out[:, m : n - m + 1] = interior.std(axis=2)
    for i in range(m):
        out[:, i] = rows[:, : i + m].std(axis=1)
    for i in range(n - m + 1, n):
        out[:, i] = rows[:, i - m :].std(axis=1)
    return out


def add_gaussian_noise(s: Series, sigma: float, seed: int) -> Series:
    """Add N(0, sigma^2) noise, re-clamped to [0, 1]. Deterministic per seed."""
    if sigma < 0:
        raise ValueError("noise sigma must be non-negative")
    if not s.normalized:
        raise ValueError("noise perturbation expects a normalized series")
    rng = np.random.default_rng(seed)
    noisy = s.values + rng.normal(0.0, sigma, size=len(s))
    np.clip(noisy, 0.0, 1.0, out=noisy)
    return Series(
        id=s.id,
        values=noisy,
        normalized=True,
        norm_min=s.norm_min,
        norm_max=s.norm_max,
    )


def circular_shift_right(s: Series, steps: int) -> Series:
    """Rotate samples right by ``steps`` with wraparound."""
    if steps < 0:
        raise ValueError("shift steps must be non-negative")
    return Series(
        id=s.id,
        values=np.roll(s.values, steps),
        normalized=s.normalized,
        norm_min=s.norm_min,
        norm_max=s.norm_max,
    )
