"""File-based ingestion and CSV/JSON export helpers."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from .timeseries import DataError, validate_prices

HOUR = pd.Timedelta(hours=1)


def _parse_timestamps(col: pd.Series) -> pd.DatetimeIndex:
    if pd.api.types.is_numeric_dtype(col):
        return pd.DatetimeIndex(pd.to_datetime(col.to_numpy(), unit="s", utc=True))
    try:
        return pd.DatetimeIndex(pd.to_datetime(col, utc=True, format="ISO8601"))
    except (ValueError, TypeError) as exc:
        raise DataError(f"unparseable timestamp column: {exc}") from None


def read_prices(path, gaps: str = "error") -> pd.Series:
    """Read a ``timestamp,close`` CSV with hourly cadence.

    ``gaps="error"`` rejects missing hours, ``gaps="ffill"`` fills them with
    the previous close.
    """
    if gaps not in ("error", "ffill"):
        raise ValueError(f"unknown gap policy {gaps!r}")
    df = pd.read_csv(path, float_precision="round_trip")
    missing = {"timestamp", "close"} - set(df.columns)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    idx = _parse_timestamps(df["timestamp"])
    prices = pd.Series(df["close"].to_numpy(dtype=float), index=idx, name="close")
    prices = validate_prices(prices)
    steps = np.diff(prices.index.asi8)
    off = np.flatnonzero(steps != HOUR.value)
    if off.size:
        if gaps == "error" or np.any(steps[off] % HOUR.value):
            t = prices.index[off[0]]
            raise DataError(f"{path}: non-hourly step after {t} (use --gaps=ffill to fill)")
        full = pd.date_range(prices.index[0], prices.index[-1], freq="h")
        prices = prices.reindex(full).ffill()
        prices.name = "close"
    return prices


def write_prices(prices: pd.Series, path) -> None:
    df = pd.DataFrame({"timestamp": _iso(prices.index), "close": prices.to_numpy()})
    df.to_csv(path, index=False, float_format="%.17g")


def _iso(index: pd.DatetimeIndex) -> list[str]:
    return [ts.strftime("%Y-%m-%dT%H:%M:%SZ") for ts in index]


def write_frame(df: pd.DataFrame, path, index_label: str = "timestamp") -> None:
    out = df.copy()
    if isinstance(out.index, pd.DatetimeIndex):
        out.index = _iso(out.index)
    out.to_csv(path, index_label=index_label, float_format="%.17g")


def read_frame(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"expected artifact {path} is missing")
    df = pd.read_csv(path, index_col=0, float_precision="round_trip")
    df.index = pd.DatetimeIndex(pd.to_datetime(df.index, utc=True, format="ISO8601"))
    df.index.name = None
    return df


def write_tvar_labels(tvar: pd.DataFrame, labels: pd.Series, path) -> None:
    df = pd.DataFrame({
        "tvar_upper": tvar["upper"],
        "tvar_lower": tvar["lower"],
        "label": labels.reindex(tvar.index).astype("Int64"),
    })
    write_frame(df, path)


def write_probabilities(p: pd.Series, path) -> None:
    write_frame(pd.DataFrame({"p": p}), path)


def read_probabilities(path) -> pd.Series:
    return read_frame(path)["p"]


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"expected artifact {path} is missing")
    return json.loads(path.read_text())


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, pd.Timestamp):
        return o.isoformat()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
