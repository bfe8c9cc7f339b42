"""Price ingestion, returns, Pearson correlation and correlation distances."""

from __future__ import annotations

import abc
import csv
import io
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
import requests

from .errors import FormatError, InputError, InsufficientDataError, TransportError
from .graph import WeightedGraph

log = logging.getLogger(__name__)

PROVIDER_ENV = "MARKET_RICCI_PROVIDER_URL"
DEFAULT_MAX_MISSING = 0.05
DEFAULT_MIN_DATES = 30
COINCIDENT_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class PriceTable:
    tickers: tuple
    dates: tuple
    prices: np.ndarray  # tickers x dates
    dropped: dict = field(default_factory=dict)  # ticker -> reason
    filled: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.prices.T, index=pd.Index(self.dates, name="date"), columns=list(self.tickers))

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["date", *self.tickers])
        for k, d in enumerate(self.dates):
            wr.writerow([d.isoformat(), *(repr(float(x)) for x in self.prices[:, k])])
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class ReturnMatrix:
    tickers: tuple
    returns: np.ndarray  # tickers x (dates - 1)
    mean: np.ndarray
    std: np.ndarray
    method: str = "log"
    dropped: tuple = ()


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    tickers: tuple
    C: np.ndarray

    def to_csv(self) -> str:
        return _matrix_csv(self.tickers, self.C)


# -- loading -----------------------------------------------------------------

def _read_frame(source) -> pd.DataFrame:
    if isinstance(source, pd.DataFrame):
        return source.copy()
    path = Path(source)
    if not path.exists():
        raise InputError(f"price file not found: {path}")
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise FormatError(f"cannot parse {path.name}: {exc}") from None
    except pd.errors.EmptyDataError:
        raise FormatError(f"{path.name} is empty", row=1) from None


def _coerce(df: pd.DataFrame) -> pd.DataFrame:
    if df.shape[1] < 2:
        raise FormatError("expected a date column and at least one ticker column", row=1)
    cols = [str(c).strip() for c in df.columns]
    if cols[0].lower() != "date":
        raise FormatError("first column must be 'date'", row=1, column=cols[0])
    dupes = sorted({c for c in cols[1:] if cols[1:].count(c) > 1})
    if dupes:
        raise FormatError(f"duplicate tickers {dupes}", row=1)
    df = df.copy()
    df.columns = cols
    try:
        dates = pd.to_datetime(df["date"], format="ISO8601")
    except (ValueError, TypeError):
        bad = next(i for i, v in enumerate(df["date"]) if pd.isna(pd.to_datetime(v, errors="coerce", format="ISO8601")))
        raise FormatError(f"unparseable date {df['date'].iloc[bad]!r}", row=bad + 2, column="date") from None
    if dates.duplicated().any():
        dup = int(np.nonzero(dates.duplicated().to_numpy())[0][0])
        raise FormatError("duplicate date", row=dup + 2, column="date")
    index = pd.Index([d.date() for d in dates], name="date")
    out = {}
    for c in cols[1:]:
        raw = df[c]
        if raw.dtype == object:
            raw = raw.astype(str).str.strip().replace({"": np.nan, "NA": np.nan, "NaN": np.nan, "nan": np.nan, "null": np.nan})
        vals = pd.to_numeric(raw, errors="coerce")
        bad = vals.isna() & raw.notna()
        if bad.any():
            r = int(np.nonzero(bad.to_numpy())[0][0])
            raise FormatError(f"non-numeric price {raw.iloc[r]!r}", row=r + 2, column=c)
        v = vals.to_numpy(dtype=float)
        nonpos = ~np.isnan(v) & ~(np.isfinite(v) & (v > 0))
        if nonpos.any():
            r = int(np.nonzero(nonpos)[0][0])
            raise FormatError(f"price must be finite and positive, got {v[r]}", row=r + 2, column=c)
        out[c] = v
    return pd.DataFrame(out, index=index).sort_index()


def load_prices(
    source: Union[str, os.PathLike, pd.DataFrame],
    max_missing: float = DEFAULT_MAX_MISSING,
    min_dates: int = DEFAULT_MIN_DATES,
) -> PriceTable:
    """Read a ``date,<ticker>...`` table into an aligned :class:`PriceTable`.

    Tickers missing more than ``max_missing`` of their cells, or missing the
    first date, are dropped (see ``PriceTable.dropped``); remaining gaps are
    forward-filled.
    """
    df = _coerce(_read_frame(source))
    dropped: dict = {}
    n = len(df)
    for c in list(df.columns):
        miss = df[c].isna()
        if n and miss.mean() > max_missing:
            dropped[c] = f"missing {miss.mean():.1%} of cells"
        elif n and miss.iloc[0]:
            dropped[c] = "leading gap"
    for c, why in dropped.items():
        log.warning("dropping %s: %s", c, why)
    df = df.drop(columns=list(dropped))
    filled = int(df.isna().sum().sum())
    df = df.ffill()
    if df.shape[1] < 2 or len(df) < min_dates:
        raise InsufficientDataError(
            f"need >= 2 tickers and >= {min_dates} dates after filtering, have {df.shape[1]} x {len(df)}")
    return PriceTable(tuple(df.columns), tuple(df.index), df.to_numpy(dtype=float).T, dropped, filled)


# -- remote provider ---------------------------------------------------------

class QuoteProvider(abc.ABC):
    """Source of ``date,<ticker>...`` CSV price tables."""

    @abc.abstractmethod
    def fetch_csv(self, tickers: Sequence[str], start: date, end: date) -> str:
        ...


class HttpQuoteProvider(QuoteProvider):
    """``GET <endpoint>?tickers=A,B&start=YYYY-MM-DD&end=YYYY-MM-DD``.

    Unknown tickers are simply absent from the returned columns. Requests to
    one endpoint are serialized.
    """

    _locks: dict = {}
    _locks_guard = threading.Lock()

    def __init__(self, endpoint: Optional[str] = None, timeout: float = 30.0, retries: int = 0):
        endpoint = endpoint or os.environ.get(PROVIDER_ENV)
        if not endpoint:
            raise InputError(f"no provider endpoint given and {PROVIDER_ENV} is unset")
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        with self._locks_guard:
            self._lock = self._locks.setdefault(endpoint, threading.Lock())

    def fetch_csv(self, tickers, start, end) -> str:
        params = {"tickers": ",".join(tickers), "start": start.isoformat(), "end": end.isoformat()}
        last = None
        with self._lock:
            for _ in range(self.retries + 1):
                try:
                    resp = requests.get(self.endpoint, params=params, timeout=self.timeout)
                except requests.RequestException as exc:
                    last = exc
                    continue
                if resp.status_code >= 500:
                    last = f"HTTP {resp.status_code}"
                    continue
                if resp.status_code != 200:
                    raise InputError(f"provider rejected request: HTTP {resp.status_code}")
                return resp.text
        raise TransportError(f"provider {self.endpoint} unreachable: {last}")


def fetch_prices(
    provider: QuoteProvider,
    tickers: Sequence[str],
    start: date,
    end: date,
    max_missing: float = DEFAULT_MAX_MISSING,
    min_dates: int = DEFAULT_MIN_DATES,
) -> PriceTable:
    """Download prices and load them exactly like :func:`load_prices`."""
    if not tickers:
        raise InputError("no tickers requested")
    text = provider.fetch_csv(list(tickers), start, end)
    try:
        df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise FormatError(f"provider returned unparseable CSV: {exc}") from None
    got = [c.strip() for c in df.columns[1:]]
    unknown = [t for t in tickers if t not in got]
    for t in unknown:
        log.warning("provider does not know ticker %s; omitted", t)
    if len(unknown) == len(tickers):
        raise InputError("provider knows none of the requested tickers")
    keep = [df.columns[0]] + [c for c in df.columns[1:] if c.strip() in tickers]
    return load_prices(df[keep], max_missing, min_dates)


# -- returns and correlation -------------------------------------------------

def period_returns(prices: np.ndarray, method: str = "log") -> np.ndarray:
    """``ln(p_t / p_{t-1})`` or ``p_t / p_{t-1} - 1`` along the last axis."""
    x = np.asarray(prices, dtype=float)
    if method == "log":
        return np.log(x[..., 1:] / x[..., :-1])
    if method == "simple":
        return x[..., 1:] / x[..., :-1] - 1.0
    raise InputError(f"unknown return method {method!r}")


def compute_returns(p: PriceTable, method: str = "log") -> ReturnMatrix:
    """Per-period returns; constant-price tickers (zero variance) are dropped."""
    r = period_returns(p.prices, method)
    if r.shape[1] < 1:
        raise InsufficientDataError("need at least two dates to form returns")
    mean = r.mean(axis=1)
    std = r.std(axis=1)  # population convention
    flat = std <= 0
    dropped = tuple(t for t, f in zip(p.tickers, flat) if f)
    for t in dropped:
        log.warning("dropping %s: constant price series", t)
    keep = ~flat
    if keep.sum() < 2:
        raise InsufficientDataError("fewer than 2 tickers with non-constant prices")
    tickers = tuple(t for t, k in zip(p.tickers, keep) if k)
    return ReturnMatrix(tickers, r[keep], mean[keep], std[keep], method, dropped)


def pearson_correlation(r: ReturnMatrix) -> CorrelationMatrix:
    z = (r.returns - r.mean[:, None]) / r.std[:, None]
    c = z @ z.T / r.returns.shape[1]
    c = (c + c.T) / 2.0
    np.clip(c, -1.0, 1.0, out=c)
    np.fill_diagonal(c, 1.0)
    return CorrelationMatrix(r.tickers, c)


@dataclass(frozen=True, eq=False)
class WeightGraphResult:
    graph: WeightedGraph
    correlation: CorrelationMatrix  # restricted to the graph's tickers
    merges: list  # (dropped, kept)


def correlation_to_weights(c: CorrelationMatrix, eps_corr: float = COINCIDENT_EPS) -> WeightGraphResult:
    """Complete graph with ``w_ij = sqrt(2 (1 - C_ij))``.

    Pairs with ``C_ij >= 1 - eps_corr`` would give zero-length edges; the
    lexicographically later ticker of such a pair is dropped and recorded.
    """
    tickers = list(c.tickers)
    order = sorted(range(len(tickers)), key=lambda k: tickers[k])
    dropped: set = set()
    merges = []
    for a_pos, a in enumerate(order):
        if a in dropped:
            continue
        for b in order[a_pos + 1:]:
            if b not in dropped and c.C[a, b] >= 1.0 - eps_corr:
                dropped.add(b)
                merges.append((tickers[b], tickers[a]))
                log.warning("ticker %s coincides with %s (C = %.15f); dropped", tickers[b], tickers[a], c.C[a, b])
    keep = [k for k in range(len(tickers)) if k not in dropped]
    if len(keep) < 2:
        raise InsufficientDataError("all tickers are coincident; no positive-length edges remain")
    sub = c.C[np.ix_(keep, keep)]
    w = np.sqrt(np.maximum(2.0 * (1.0 - sub), 0.0))
    np.fill_diagonal(w, 0.0)
    kept = tuple(tickers[k] for k in keep)
    return WeightGraphResult(WeightedGraph(kept, w), CorrelationMatrix(kept, sub), merges)


# -- exports -----------------------------------------------------------------

def _matrix_csv(labels, m) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["", *labels])
    for lab, row in zip(labels, m):
        wr.writerow([lab, *(repr(float(x)) for x in row)])
    return buf.getvalue()


def weights_csv(g: WeightedGraph) -> str:
    return _matrix_csv(g.nodes, g.weights)


def edge_list_json(res: WeightGraphResult) -> str:
    """``{nodes, edges: [{i, j, c, w}]}``; loadable as a graph edge list."""
    g, C = res.graph, res.correlation.C
    ii, jj = g.edge_indices()
    edges = [{"i": g.nodes[a], "j": g.nodes[b], "c": float(C[a, b]), "w": float(g.weights[a, b])}
             for a, b in zip(ii, jj)]
    return json.dumps({"nodes": list(g.nodes), "edges": edges}, indent=1)
