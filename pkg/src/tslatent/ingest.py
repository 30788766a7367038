"""Historical price ingestion: CSV parsing and overlapped windowing."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .series import Series


class IngestError(ValueError):
    """Raised when a CSV file cannot be turned into a valid price table."""


_DATE_FORMATS = ("%Y-%m-%d", "%Y/%m/%d", "%m/%d/%Y", "%d/%m/%Y")


def _parse_timestamp(raw: str, row_number: int) -> datetime:
    text = raw.strip()
    for fmt in _DATE_FORMATS:
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise IngestError(f"row {row_number}: unparseable timestamp {raw!r}") from None


@dataclass(frozen=True)
class ColumnConfig:
    date_column: str = "date"
    close_column: str = "close"


@dataclass
class PriceTable:
    """Close prices for one ticker, strictly increasing in time."""

    ticker: str
    timestamps: list[datetime]
    closes: np.ndarray

    def __post_init__(self) -> None:
        self.closes = np.asarray(self.closes, dtype=np.float64)
        if len(self.timestamps) != self.closes.size:
            raise IngestError("timestamps and closes disagree in length")
        if not np.all(np.isfinite(self.closes)) or np.any(self.closes <= 0):
            raise IngestError("closes must be finite and positive")
        for i in range(1, len(self.timestamps)):
            if self.timestamps[i] <= self.timestamps[i - 1]:
                raise IngestError(
                    f"row {i + 2}: timestamps not strictly increasing"
                )

    def __len__(self) -> int:
        return int(self.closes.size)


@dataclass(frozen=True)
class WindowSpec:
    """Fixed-length overlapped windowing."""

    window_length: int = 30
    stride: int = 5

    def __post_init__(self) -> None:
        if self.window_length < 2:
            raise ValueError("window_length must be at least 2")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")

    def count(self, n: int) -> int:
        if n < self.window_length:
            return 0
        return (n - self.window_length) // self.stride + 1


def load_csv(
    path: str | Path,
    columns: ColumnConfig = ColumnConfig(),
    ticker: str | None = None,
) -> PriceTable:
    """Parse a comma-separated file with a header row into a price table.

    Rows with missing or unparseable close values are rejected with their
    row number (1-based, counting the header as row 1).
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"no such file: {path}")
    if ticker is None:
        ticker = path.stem

    timestamps: list[datetime] = []
    closes: list[float] = []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise IngestError(f"{path}: file is empty")
        for name in (columns.date_column, columns.close_column):
            if name not in reader.fieldnames:
                raise IngestError(f"{path}: missing column {name!r}")
        for row_number, row in enumerate(reader, start=2):
            raw_close = (row.get(columns.close_column) or "").strip()
            if not raw_close:
                raise IngestError(f"row {row_number}: missing close value")
            try:
                close = float(raw_close)
            except ValueError:
                raise IngestError(
                    f"row {row_number}: unparseable close value {raw_close!r}"
                ) from None
            timestamps.append(_parse_timestamp(row.get(columns.date_column) or "", row_number))
            closes.append(close)

    if len(closes) < 2:
        raise IngestError(f"{path}: needs at least 2 data rows")
    return PriceTable(ticker=ticker, timestamps=timestamps, closes=np.asarray(closes))


def window_series(table: PriceTable, spec: WindowSpec = WindowSpec()) -> list[Series]:
    """Slice a table into overlapped windows at offsets 0, stride, 2*stride, ...

    Window ids are ``<ticker>:<start_offset>``.
    """
    n = len(table)
    if n < spec.window_length:
        raise IngestError(
            f"table {table.ticker!r} has {n} rows, shorter than window "
            f"{spec.window_length}"
        )
    windows = []
    for k in range(spec.count(n)):
        start = k * spec.stride
        values = table.closes[start : start + spec.window_length].copy()
        windows.append(Series(id=f"{table.ticker}:{start}", values=values))
    return windows
