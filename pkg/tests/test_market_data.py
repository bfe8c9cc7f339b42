import json
import logging
from datetime import date, timedelta

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from market_ricci.errors import FormatError, InputError, InsufficientDataError, TransportError
from market_ricci.market_data import (
    CorrelationMatrix,
    HttpQuoteProvider,
    PriceTable,
    ReturnMatrix,
    compute_returns,
    correlation_to_weights,
    edge_list_json,
    fetch_prices,
    load_prices,
    pearson_correlation,
    period_returns,
)


def frame(columns, n=None, start="2021-01-04"):
    n = n or len(next(iter(columns.values())))
    df = pd.DataFrame(columns)
    df.insert(0, "date", pd.date_range(start, periods=n, freq="D").strftime("%Y-%m-%d"))
    return df


def table(rows):
    rows = np.asarray(rows, dtype=float)
    d0 = date(2021, 1, 1)
    return PriceTable(tuple(f"T{k}" for k in range(len(rows))),
                      tuple(d0 + timedelta(days=i) for i in range(rows.shape[1])), rows)


def returns_of(x):
    x = np.asarray(x, dtype=float)
    return ReturnMatrix(tuple(f"S{k}" for k in range(len(x))), x, x.mean(1), x.std(1))


# -- loading --------------------------------------------------------------------

def test_load_small_table(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("date,AAA,BBB\n2021-01-05,10,20\n2021-01-04,11,21\n2021-01-06,12,22\n")
    t = load_prices(p, min_dates=3)
    assert t.tickers == ("AAA", "BBB") and len(t.dates) == 3
    assert t.dates == tuple(sorted(t.dates))
    assert t.prices[0].tolist() == [11, 10, 12]


def test_default_needs_thirty_dates(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("date,AAA,BBB\n2021-01-05,10,20\n2021-01-04,11,21\n2021-01-06,12,22\n")
    with pytest.raises(InsufficientDataError):
        load_prices(p)


def test_sparse_ticker_dropped_and_reported():
    n = 40
    sparse = [np.nan if i % 2 else 5.0 for i in range(n)]
    t = load_prices(frame({"A": np.linspace(1, 2, n), "B": np.linspace(2, 3, n), "C": sparse}))
    assert t.tickers == ("A", "B") and "C" in t.dropped


def test_leading_gap_dropped_and_inner_gap_filled():
    n = 40
    lead = [np.nan] + [3.0] * (n - 1)
    gap = [1.0, 2.0, np.nan] + [4.0] * (n - 3)
    t = load_prices(frame({"A": np.linspace(1, 2, n), "L": lead, "G": gap}), max_missing=0.05)
    assert t.dropped == {"L": "leading gap"}
    assert t.prices[t.tickers.index("G"), 2] == 2.0 and t.filled == 1


def test_single_ticker_is_insufficient():
    with pytest.raises(InsufficientDataError):
        load_prices(frame({"A": np.linspace(1, 2, 40)}))


@pytest.mark.parametrize("text, row, column", [
    ("date,A,B\n2021-01-01,1,2\n2021-01-02,x,2\n", 3, "A"),
    ("date,A,B\n2021-01-01,1,2\nnot-a-date,1,2\n", 3, "date"),
    ("date,A,B\n2021-01-01,1,2\n2021-01-02,-4,2\n", 3, "A"),
    ("day,A,B\n2021-01-01,1,2\n", 1, "day"),
    ("date,A,B\n2021-01-01,1,2\n2021-01-01,1,2\n", 3, "date"),
])
def test_format_errors_carry_location(tmp_path, text, row, column):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(FormatError) as err:
        load_prices(p, min_dates=2)
    assert err.value.row == row and err.value.column == column


def test_missing_file_is_input_error(tmp_path):
    with pytest.raises(InputError):
        load_prices(tmp_path / "nope.csv")


# -- returns ----------------------------------------------------------------------

def test_simple_and_log_returns():
    assert period_returns([100, 110], "simple") == pytest.approx([0.10], abs=1e-15)
    assert period_returns([100, 110], "log") == pytest.approx([0.0953102], abs=1e-7)
    r = compute_returns(table([[100, 110, 99], [50, 40, 45]]), "simple")
    assert r.returns[0] == pytest.approx([0.10, -0.10], abs=1e-15)


def test_unknown_return_method():
    with pytest.raises(InputError):
        compute_returns(table([[1, 2, 3], [3, 1, 2]]), "excess")


def test_constant_ticker_dropped(caplog):
    with caplog.at_level(logging.WARNING):
        r = compute_returns(table([[1, 2, 3], [50, 50, 50], [3, 1, 2]]))
    assert r.tickers == ("T0", "T2") and r.dropped == ("T1",)
    assert "constant" in caplog.text


def test_too_many_constant_tickers():
    with pytest.raises(InsufficientDataError):
        compute_returns(table([[1, 2, 3], [50, 50, 50]]))


def test_population_convention():
    r = compute_returns(table([[1, 2, 3, 5], [1, 3, 2, 5]]), "simple")
    assert r.std[1] == pytest.approx(np.std(r.returns[1], ddof=0))


# -- correlation ------------------------------------------------------------------

def test_correlation_oracle_value():
    c = pearson_correlation(returns_of([[1, 2, 3], [1, 2, 4]]))
    assert c.C[0, 1] == pytest.approx(0.981981, abs=1e-6)
    assert c.C[0, 1] == pytest.approx(stats.pearsonr([1, 2, 3], [1, 2, 4])[0], abs=1e-14)


def test_self_and_anti_correlation():
    x = np.array([0.1, -0.3, 0.2, 0.05])
    c = pearson_correlation(returns_of([x, x, -x]))
    assert c.C[0, 0] == 1.0
    assert c.C[0, 1] == pytest.approx(1.0, abs=1e-15) and c.C[0, 2] == pytest.approx(-1.0, abs=1e-15)


@st.composite
def return_panels(draw):
    n = draw(st.integers(2, 6))
    t = draw(st.integers(3, 40))
    rng = np.random.default_rng(draw(st.integers(0, 2 ** 32 - 1)))
    x = rng.normal(size=(n, t)) + rng.normal(size=t) * draw(st.floats(0, 2))
    return x


@given(return_panels())
def test_correlation_matrix_invariants(x):
    C = pearson_correlation(returns_of(x)).C
    assert np.array_equal(C, C.T) and np.all(np.diag(C) == 1.0)
    assert np.all(np.abs(C) <= 1.0)
    assert np.linalg.eigvalsh(C).min() >= -1e-8
    assert np.allclose(C, np.corrcoef(x), atol=1e-12)


@given(return_panels(), st.data())
def test_correlation_affine_invariance(x, data):
    n = len(x)
    a = np.array(data.draw(st.lists(st.floats(0.01, 100), min_size=n, max_size=n)))
    b = np.array(data.draw(st.lists(st.floats(-10, 10), min_size=n, max_size=n)))
    C1 = pearson_correlation(returns_of(x)).C
    C2 = pearson_correlation(returns_of(a[:, None] * x + b[:, None])).C
    assert np.allclose(C1, C2, atol=1e-12)


@given(return_panels())
def test_dropping_a_ticker_keeps_other_correlations(x):
    C = pearson_correlation(returns_of(x)).C
    C_sub = pearson_correlation(returns_of(x[1:])).C
    assert np.allclose(C[1:, 1:], C_sub, atol=1e-15)


# -- weights -----------------------------------------------------------------------

@pytest.mark.parametrize("c, w", [(0.0, np.sqrt(2)), (-1.0, 2.0), (0.5, 1.0)])
def test_weight_formula(c, w):
    res = correlation_to_weights(CorrelationMatrix(("A", "B"), np.array([[1.0, c], [c, 1.0]])))
    assert res.graph.weight("A", "B") == pytest.approx(w, abs=1e-15)


def test_coincident_tickers_merge_to_earlier_symbol():
    C = np.array([[1.0, 1.0, 0.2], [1.0, 1.0, 0.2], [0.2, 0.2, 1.0]])
    res = correlation_to_weights(CorrelationMatrix(("GOOGL", "GOOG", "MSFT"), C))
    assert res.graph.nodes == ("GOOG", "MSFT") and res.merges == [("GOOGL", "GOOG")]


def test_all_coincident_is_an_error():
    with pytest.raises(InsufficientDataError):
        correlation_to_weights(CorrelationMatrix(("A", "B"), np.ones((2, 2))))


@given(return_panels())
def test_weight_roundtrip_and_bounds(x):
    c = pearson_correlation(returns_of(x))
    res = correlation_to_weights(c)
    g = res.graph
    ii, jj = g.edge_indices()
    w = g.weights[ii, jj]
    assert np.all(w > 0) and np.all(w <= 2) and np.array_equal(g.weights, g.weights.T)
    back = 1 - g.weights ** 2 / 2
    np.fill_diagonal(back, 1.0)
    assert np.allclose(back, res.correlation.C, atol=1e-12)


def test_edge_list_json_fields():
    c = pearson_correlation(returns_of([[1, 2, 3], [1, 2, 4], [3, 1, 2]]))
    data = json.loads(edge_list_json(correlation_to_weights(c)))
    assert set(data["edges"][0]) == {"i", "j", "c", "w"} and len(data["edges"]) == 3


# -- provider ----------------------------------------------------------------------

def test_fetch_two_tickers(quote_server):
    t = fetch_prices(HttpQuoteProvider(quote_server), ["AAA", "BBB"],
                     date(2022, 3, 1), date(2022, 3, 11), min_dates=10)
    assert t.tickers == ("AAA", "BBB") and len(t.dates) == 10


def test_fetch_unknown_ticker_warns(quote_server, caplog):
    with caplog.at_level(logging.WARNING):
        t = fetch_prices(HttpQuoteProvider(quote_server), ["AAA", "ZZZ", "CCC"],
                         date(2022, 3, 1), date(2022, 3, 11), min_dates=10)
    assert t.tickers == ("AAA", "CCC") and "ZZZ" in caplog.text


def test_fetch_all_unknown(quote_server):
    with pytest.raises(InputError):
        fetch_prices(HttpQuoteProvider(quote_server), ["X", "Y"], date(2022, 3, 1), date(2022, 3, 11))


def test_fetch_matches_load(quote_server, tmp_path):
    provider = HttpQuoteProvider(quote_server)
    text = provider.fetch_csv(["AAA", "BBB"], date(2022, 1, 1), date(2022, 3, 1))
    (tmp_path / "p.csv").write_text(text)
    a = fetch_prices(provider, ["AAA", "BBB"], date(2022, 1, 1), date(2022, 3, 1))
    b = load_prices(tmp_path / "p.csv")
    assert a.to_csv() == b.to_csv()


def test_unreachable_endpoint_is_transport_error():
    with pytest.raises(TransportError):
        fetch_prices(HttpQuoteProvider("http://127.0.0.1:9/prices", timeout=2), ["AAA", "BBB"],
                     date(2022, 3, 1), date(2022, 3, 11))


def test_endpoint_from_environment(monkeypatch):
    monkeypatch.setenv("MARKET_RICCI_PROVIDER_URL", "http://example.invalid/q")
    assert HttpQuoteProvider().endpoint == "http://example.invalid/q"
    monkeypatch.delenv("MARKET_RICCI_PROVIDER_URL")
    with pytest.raises(InputError):
        HttpQuoteProvider()
