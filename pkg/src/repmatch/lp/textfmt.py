"""Plain-text model files.

Grammar (one record per line, ``#`` starts a comment, tokens split on
whitespace)::

    LP <n_vars> <n_rows>
    NAME <j> <name>                         # optional, any number
    OBJ <c_0> <c_1> ... <c_{n-1}>
    ROW <i> <sense> <rhs> [<j>:<a_ij> ...]  # sense is <=, = or >=; nonzeros only
    BOUND <j> <lo> <hi>                     # one per variable; inf / -inf allowed
    END

Numbers are written with ``repr`` so a dump/read round trip is exact.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .simplex import LinearProgram

__all__ = ["dump_lp", "write_lp", "read_lp"]


def dump_lp(lp: LinearProgram, names: Sequence[str] | None = None) -> str:
    lines = [f"LP {lp.n_vars} {lp.n_rows}"]
    if names is not None:
        lines += [f"NAME {j} {nm}" for j, nm in enumerate(names)]
    lines.append("OBJ " + " ".join(repr(float(v)) for v in lp.c))
    for i, (row, s, rhs) in enumerate(zip(lp.A, lp.senses, lp.b)):
        nz = " ".join(f"{j}:{float(row[j])!r}" for j in np.flatnonzero(row))
        lines.append(f"ROW {i} {s} {float(rhs)!r} {nz}".rstrip())
    for j, (lo, hi) in enumerate(zip(lp.lo, lp.hi)):
        lines.append(f"BOUND {j} {float(lo)!r} {float(hi)!r}")
    lines.append("END")
    return "\n".join(lines) + "\n"


def write_lp(lp: LinearProgram, path: str | Path, names: Sequence[str] | None = None) -> None:
    Path(path).write_text(dump_lp(lp, names), encoding="utf-8")


def read_lp(source: str | Path) -> LinearProgram:
    """Parse a model file (path or text)."""
    text = source
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text(encoding="utf-8")
    n = m = None
    c = None
    A = b = senses = lo = hi = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key = tok[0]
        try:
            if key == "LP":
                n, m = int(tok[1]), int(tok[2])
                A = np.zeros((m, n))
                b = np.zeros(m)
                senses = ["<="] * m
                lo = np.zeros(n)
                hi = np.full(n, np.inf)
            elif key == "NAME":
                continue
            elif key == "OBJ":
                c = np.array([float(v) for v in tok[1:]])
                if c.size != n:
                    raise ValueError(f"expected {n} objective coefficients")
            elif key == "ROW":
                i = int(tok[1])
                senses[i] = tok[2]
                b[i] = float(tok[3])
                for item in tok[4:]:
                    j, v = item.split(":")
                    A[i, int(j)] = float(v)
            elif key == "BOUND":
                j = int(tok[1])
                lo[j] = float(tok[2])
                hi[j] = float(tok[3])
            elif key == "END":
                break
            else:
                raise ValueError(f"unknown record {key!r}")
        except (IndexError, TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    if n is None or c is None:
        raise ValueError("model file lacks LP header or OBJ record")
    return LinearProgram(c, A, tuple(senses), b, lo, hi)
