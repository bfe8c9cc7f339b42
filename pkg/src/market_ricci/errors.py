"""Exception hierarchy shared by every stage of the pipeline."""


class RicciError(Exception):
    """Base class for all package errors."""


class InputError(RicciError):
    """Bad or unreadable input (files, tables, reference partitions)."""


class FormatError(InputError):
    """A file could not be parsed.

    The message carries the offending row/column when known.
    """

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class InsufficientDataError(InputError):
    """Too few tickers or dates survive filtering."""


class TransportError(RicciError):
    """Network failure while talking to a quote provider; safe to retry."""


class ConfigError(RicciError):
    """Invalid configuration value."""


class GraphError(RicciError):
    """Structural problem with a graph (unknown edge, disconnection, ...)."""


class DisconnectedGraphError(GraphError):
    def __init__(self, components):
        self.components = [sorted(c, key=str) for c in components]
        listing = "; ".join("{" + ", ".join(map(str, c)) + "}" for c in self.components)
        super().__init__(f"graph is disconnected into {len(self.components)} components: {listing}")


class NumericalError(RicciError):
    """A numerical routine failed (solver did not converge, degenerate distance)."""
