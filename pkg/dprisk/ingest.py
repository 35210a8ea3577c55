"""
CSV price ingestion.

A price file has a header row, one date column and one or more price
columns. Encoding is sniffed with chardet, dates are parsed with dateutil,
and every mapped price column becomes a ``PriceSeries``.
"""

import io
import os
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import chardet
import numpy as np
import pandas as pd
from dateutil import parser as date_parser

from .errors import IngestError, InputError
from .logutil import LoggingMixin
from .market import LogReturnSeries, PriceSeries, compute_log_returns

MAX_BAD_FRACTION = 0.05
MISSING_TOKENS = {"", "na", "n/a", "nan", "null", "none", "-"}

ColumnSpec = Optional[Union[Sequence[str], Mapping[str, str]]]


class PriceParser(LoggingMixin):
    """Reads price CSVs into validated PriceSeries.

    Usage:
        parser = PriceParser().from_file("prices.csv", date_column="date")
        series = parser.to_series()
    """

    def __init__(self, enable_logging: bool = True, verbose: bool = True,
                 max_bad_fraction: float = MAX_BAD_FRACTION):
        self.enable_logging = enable_logging
        self.verbose = verbose
        self.max_bad_fraction = max_bad_fraction
        self._setup_logging("price_parser")
        self.raw: Optional[pd.DataFrame] = None
        self.source: Optional[str] = None
        self.encoding: Optional[str] = None
        self.date_column: Optional[str] = None
        self.columns: Dict[str, str] = {}
        self.missing_counts: Dict[str, int] = {}
        self.bad_lines: List[int] = []
        self.duplicate_dates = 0
        self._frame: Optional[pd.DataFrame] = None

    # ---------- Read raw files ----------
    def _detect_encoding(self, blob: bytes) -> str:
        guess = chardet.detect(blob[:65536]) if blob else {}
        encoding = guess.get("encoding") or "utf-8"
        if encoding.lower() == "ascii":
            encoding = "utf-8"
        return encoding

    def from_file(self, file_path: Union[str, Path], date_column: Optional[str] = None,
                  price_columns: ColumnSpec = None):
        """Load one CSV file; ``price_columns`` is a list or a {column: asset_id} mapping."""
        self._log_info(f"Reading prices from file: {file_path}")
        try:
            blob = Path(file_path).read_bytes()
        except FileNotFoundError as e:
            self._log_error(f"File not found: {file_path}")
            raise IngestError(f"file not found: {file_path}") from e
        self.encoding = self._detect_encoding(blob)
        try:
            text = blob.decode(self.encoding, errors="replace")
            raw = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=True)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeError) as e:
            self._log_error(f"Could not parse {file_path} as CSV: {e}")
            raise IngestError(f"could not parse {file_path} as CSV: {e}") from e
        raw.columns = [str(c).strip() for c in raw.columns]
        self.raw = raw
        self.source = str(file_path)
        self._resolve_columns(date_column, price_columns)
        self._frame = None
        self._log_info(f"Successfully read {len(raw)} rows from {file_path} (encoding {self.encoding})")
        return self

    def from_folder(self, folder_path: Union[str, Path], date_column: Optional[str] = None,
                    price_columns: ColumnSpec = None) -> List[PriceSeries]:
        """Read every ``*.csv`` in a folder; returns the concatenated series list."""
        self._log_info(f"Reading prices from folder: {folder_path}")
        if not os.path.isdir(folder_path):
            self._log_error(f"Folder not found: {folder_path}")
            raise IngestError(f"folder not found: {folder_path}")
        series = []
        for fname in sorted(os.listdir(folder_path)):
            if fname.lower().endswith(".csv"):
                series.extend(self.from_file(Path(folder_path) / fname, date_column, price_columns).to_series())
        self._log_info(f"Read {len(series)} price series from {folder_path}")
        return series

    def _resolve_columns(self, date_column, price_columns):
        header = list(self.raw.columns)
        if date_column is None:
            named = [c for c in header if "date" in c.lower() or "time" in c.lower()]
            date_column = named[0] if named else header[0]
        if date_column not in header:
            raise IngestError(f"date column {date_column!r} not in header {header}")
        if price_columns is None:
            mapping = {c: c for c in header if c != date_column}
        elif isinstance(price_columns, Mapping):
            mapping = dict(price_columns)
        else:
            mapping = {c: c for c in price_columns}
        missing = [c for c in mapping if c not in header]
        if missing:
            raise IngestError(f"price columns {missing} not in header {header}")
        if not mapping:
            raise IngestError("no price columns to read")
        self.date_column = date_column
        self.columns = mapping

    # ---------- Parse ----------
    @staticmethod
    def _parse_date(value: str):
        try:
            return pd.Timestamp(date_parser.parse(value)).tz_localize(None)
        except (ValueError, OverflowError, TypeError):
            return None

    @staticmethod
    def _parse_price(value: str):
        token = value.strip().replace(",", "")
        if token.lower() in MISSING_TOKENS:
            return np.nan, False
        try:
            return float(token), False
        except ValueError:
            return np.nan, True

    def normalize(self) -> pd.DataFrame:
        """Typed frame: a ``timestamp`` column plus one float column per asset, with bad rows removed.

        Rows whose date or any price cannot be parsed are dropped; more than
        ``max_bad_fraction`` of such rows is a hard error listing file line
        numbers. Missing price cells stay NaN and are counted per column.
        """
        if self.raw is None:
            raise InputError("no file loaded; call from_file first")
        n = len(self.raw)
        timestamps = []
        prices = {asset: [] for asset in self.columns.values()}
        missing = {asset: 0 for asset in self.columns.values()}
        bad = []
        for i, row in enumerate(self.raw.itertuples(index=False)):
            values = dict(zip(self.raw.columns, row))
            stamp = self._parse_date(values[self.date_column])
            parsed = {}
            row_bad = stamp is None
            for column, asset in self.columns.items():
                value, unparseable = self._parse_price(values[column])
                row_bad = row_bad or unparseable
                parsed[asset] = value
            if row_bad:
                bad.append(i + 2)
                continue
            timestamps.append(stamp)
            for asset, value in parsed.items():
                prices[asset].append(value)
                if np.isnan(value):
                    missing[asset] += 1

        self.bad_lines = bad
        if n and len(bad) / n > self.max_bad_fraction:
            self._log_error(f"{len(bad)} of {n} rows unparseable in {self.source}")
            raise IngestError(
                f"{len(bad)} of {n} rows ({len(bad) / n:.1%}) could not be parsed in {self.source}; "
                f"lines {bad}", line_numbers=bad)
        if bad:
            self._log_warning(f"Dropped {len(bad)} unparseable rows (lines {bad})")

        frame = pd.DataFrame(prices)
        frame.insert(0, "timestamp", pd.to_datetime(timestamps))
        frame = frame.sort_values("timestamp", kind="mergesort")
        dupes = frame["timestamp"].duplicated(keep="last")
        self.duplicate_dates = int(dupes.sum())
        if self.duplicate_dates:
            self._log_warning(f"Dropped {self.duplicate_dates} rows with duplicate dates (kept the last)")
            frame = frame[~dupes]
        self.missing_counts = missing
        for asset, count in missing.items():
            if count:
                self._log_warning(f"{asset}: dropped {count} rows with missing prices")
        self._frame = frame.reset_index(drop=True)
        return self._frame

    def to_series(self) -> List[PriceSeries]:
        """One PriceSeries per mapped column, missing cells dropped."""
        frame = self._frame if self._frame is not None else self.normalize()
        series = []
        for asset in self.columns.values():
            column = frame[["timestamp", asset]].dropna()
            ps = PriceSeries(asset, column["timestamp"].to_numpy(), column[asset].to_numpy(dtype=float))
            self._log_info(f"{asset}: {len(ps)} prices")
            series.append(ps)
        return series

    def log_returns(self) -> List[LogReturnSeries]:
        """Log-returns of every series, reporting both the price and the return count."""
        out = []
        for ps in self.to_series():
            lr = compute_log_returns(ps)
            self._log_info(f"{ps.asset_id}: {len(ps)} prices -> {len(lr)} log-returns")
            out.append(lr)
        return out


def ingest_csv(path: Union[str, Path], date_column: Optional[str] = None,
               price_columns: ColumnSpec = None, enable_logging: bool = False) -> List[PriceSeries]:
    """Read one CSV file into PriceSeries, one per mapped price column."""
    parser = PriceParser(enable_logging=enable_logging, verbose=False)
    return parser.from_file(path, date_column, price_columns).to_series()
