"""CSV persistence for traces and result tables.

Floats are written with ``repr`` (shortest round-trip decimal), so a write
followed by a read reproduces every array bit for bit.
"""

import numpy as np

from .errors import UsageError
from .forward import BoundaryTrace

TRACE_HEADER = ("t", "left", "right")


class CSVFormatError(UsageError):
    """A malformed CSV file; ``row`` is the 1-based line number (header is line 1)."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def format_table(header, rows):
    """CSV text for ``rows`` (sequences of numbers or strings) under ``header``."""
    out = [",".join(header)]
    out.extend(",".join(_cell(v) for v in row) for row in rows)
    return "\n".join(out) + "\n"


def write_table(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_table(header, rows))


def read_table(path, header=None):
    """Header tuple and a list of string rows; ``header`` (if given) must match exactly."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CSVFormatError("empty file", 1)
    got = tuple(c.strip() for c in lines[0].split(","))
    if header is not None and got != tuple(header):
        raise CSVFormatError(f"header {','.join(got)!r}, expected {','.join(header)!r}", 1)
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(got):
            raise CSVFormatError(f"expected {len(got)} fields, got {len(cells)}", i)
        rows.append((i, cells))
    return got, rows


def write_trace_csv(trace, path):
    """Write ``t,left,right`` rows."""
    cols = (map(repr, a.tolist()) for a in (trace.times, trace.left, trace.right))
    body = "\n".join(map(",".join, zip(*cols)))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(TRACE_HEADER) + "\n" + body + "\n")


def read_trace_csv(path):
    """Read a file written by :func:`write_trace_csv`."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    data = None
    if lines and lines[0] == ",".join(TRACE_HEADER):
        body = [ln for ln in lines[1:] if ln.strip()]
        fields = ",".join(body).split(",")
        if body and len(fields) == 3 * len(body):
            try:
                data = np.array(fields, dtype=float).reshape(-1, 3)
            except ValueError:
                pass
    if data is None:
        data = _read_trace_slow(path)
    try:
        return BoundaryTrace(data[:, 0], data[:, 1], data[:, 2])
    except UsageError as exc:
        raise CSVFormatError(str(exc)) from None


def _read_trace_slow(path):
    # only reached for malformed files; locates the first offending row
    _, rows = read_table(path, TRACE_HEADER)
    if not rows:
        raise CSVFormatError("no data rows", 2)
    for i, cells in rows:
        try:
            [float(c) for c in cells]
        except ValueError:
            raise CSVFormatError(f"non-numeric field in {','.join(cells)!r}", i) from None
    return np.array([[float(c) for c in cells] for _, cells in rows])


def write_modes_csv(fingerprint, path):
    """Fitted modes as ``n,lambda,pn,pn0`` rows (``pn0`` empty below order one)."""
    pn0 = fingerprint.pn0 if fingerprint.pn0 is not None else [""] * fingerprint.n
    rows = zip(range(1, fingerprint.n + 1), fingerprint.lambdas, fingerprint.pn, pn0)
    write_table(path, ("n", "lambda", "pn", "pn0"), rows)
