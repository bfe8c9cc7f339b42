"""Bundled reference partitions."""

import json
from importlib import resources


def nasdaq100_clusters() -> dict:
    """Published NASDAQ-100 cluster assignments.

    Returns a dict with ``clusters`` (leaf name -> tickers), ``level`` (leaf
    name -> depth at which it separated) and ``top`` (the first two-way split).
    """
    text = resources.files(__package__).joinpath("data/nasdaq100_clusters.json").read_text()
    return json.loads(text)
