"""TOML emission for reports and summaries.

Floats are written with 17 significant digits so that reports are
diff-able and re-parse to the same doubles. ``inf`` and ``nan`` use the TOML
spellings. Nested dicts become tables, numpy arrays become nested arrays.
"""

from __future__ import annotations

import math
import os
import re
import tempfile

import numpy as np

_BARE_KEY = re.compile(r"^[A-Za-z0-9_-]+$")


def fmt_float(v: float) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    s = "%.17g" % v
    # TOML floats need a fractional part or exponent
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _key(k) -> str:
    k = str(k)
    return k if _BARE_KEY.match(k) else '"' + _escape(k) + '"'


def _escape(s: str) -> str:
    out = s.replace("\\", "\\\\").replace('"', '\\"')
    return out.replace("\n", "\\n").replace("\t", "\\t").replace("\r", "\\r")


def _value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    if isinstance(v, str):
        return '"' + _escape(v) + '"'
    if isinstance(v, np.ndarray):
        v = v.tolist()
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_value(x) for x in v) + "]"
    if v is None:
        return '"none"'
    raise TypeError(f"cannot emit {type(v).__name__} as TOML")


def dumps(doc: dict) -> str:
    """Serialize a nested dict; scalar keys come before sub-tables."""
    lines: list = []

    def emit(d: dict, prefix: tuple):
        tables = []
        for k, v in d.items():
            if isinstance(v, dict):
                tables.append((k, v))
            else:
                lines.append(f"{_key(k)} = {_value(v)}")
        for k, v in tables:
            path = prefix + (k,)
            if not v or any(not isinstance(x, dict) for x in v.values()):
                if lines:
                    lines.append("")
                lines.append("[" + ".".join(_key(p) for p in path) + "]")
            emit(v, path)

    emit(doc, ())
    return "\n".join(lines) + "\n"


def matrix_block(M) -> dict:
    """A matrix as a ``shape`` + row-major ``data`` table (keeps 0-size shapes)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return {"shape": list(M.shape), "data": M.tolist()}


def block_to_matrix(tbl: dict) -> np.ndarray:
    shape = tuple(int(s) for s in tbl["shape"])
    return np.array(tbl["data"], dtype=float).reshape(shape)


def write_atomic(path, text: str) -> None:
    """Write to a temporary file in the target directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_lines_atomic(path, lines) -> int:
    """Stream lines into a temporary file, then rename; returns the line count."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    n = 0
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            for line in lines:
                fh.write(line)
                fh.write("\n")
                n += 1
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return n
