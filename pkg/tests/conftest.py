import threading
from datetime import date, timedelta
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from market_ricci.graph import WeightedGraph

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def complete_graph(n, w=1.0):
    m = np.full((n, n), float(w))
    np.fill_diagonal(m, 0.0)
    return WeightedGraph(tuple(f"v{i}" for i in range(n)), m)


@pytest.fixture
def path3():
    return WeightedGraph.from_edges(["a", "b", "c"], [("a", "b", 1.0), ("b", "c", 2.0)])


KNOWN = {"AAA": 10.0, "BBB": 20.0, "CCC": 30.0}


class _Quotes(BaseHTTPRequestHandler):
    def do_GET(self):
        q = parse_qs(urlparse(self.path).query)
        start = date.fromisoformat(q["start"][0])
        end = date.fromisoformat(q["end"][0])
        tickers = [t for t in q["tickers"][0].split(",") if t in KNOWN]
        lines = ["date," + ",".join(tickers)]
        d, k = start, 0
        while d < end:
            lines.append(d.isoformat() + "," + ",".join(str(KNOWN[t] + k * (1 + i) % 7)
                                                         for i, t in enumerate(tickers)))
            d += timedelta(days=1)
            k += 1
        body = ("\n".join(lines) + "\n").encode()
        self.send_response(200)
        self.send_header("Content-Type", "text/csv")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def quote_server():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _Quotes)
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}/prices"
    srv.shutdown()
    srv.server_close()


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
