"""Reading statistics files and writing result tables.

Wide layout: one column per test, the first data row holds the observed
statistics and every following row one permutation. Two-file layout: an
observed vector (one value per line or a single row) plus the permutation
matrix. ``NA``, ``NaN`` and empty cells are read as missing.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputFormatError

MISSING = {"", "na", "nan", "null"}
RECORD_HEADER = ("test_id", "t_obs", "p_emp", "p_tail", "p_hybrid", "p_bh", "source", "u", "k", "sigma_hat",
                 "xi_hat", "epsilon", "ad_pvalue")


@dataclass(frozen=True)
class StatTable:
    test_ids: list[str]
    t_obs: np.ndarray  # may contain NaN
    perms: np.ndarray  # B x m, may contain NaN


def _delimiter(path: Path, delimiter: str | None) -> str:
    if delimiter in ("tab", "\t"):
        return "\t"
    if delimiter in ("comma", ","):
        return ","
    return "," if path.suffix.lower() == ".csv" else "\t"


def _read_rows(path, delimiter: str | None) -> tuple[Path, list[list[str]]]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh, delimiter=_delimiter(path, delimiter)))
    except OSError as exc:
        raise InputFormatError(f"{path}: cannot read ({exc.strerror})") from None
    except csv.Error as exc:
        raise InputFormatError(f"{path}: {exc}") from None
    return path, rows


def _parse_cell(text: str, path: Path, line: int, col: int) -> float:
    s = text.strip()
    if s.lower() in MISSING:
        return math.nan
    try:
        v = float(s)
    except ValueError:
        raise InputFormatError(f"{path}:{line}:{col}: not a number: {text!r}") from None
    if math.isinf(v):
        raise InputFormatError(f"{path}:{line}:{col}: infinite value")
    return v


def _parse_matrix(path: Path, rows: list[list[str]], first_line: int) -> np.ndarray:
    width = None
    out = []
    for offset, row in enumerate(rows):
        line = first_line + offset
        if not row or all(not c.strip() for c in row) and len(row) <= 1:
            continue  # blank line
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise InputFormatError(f"{path}:{line}:{len(row)}: expected {width} columns, got {len(row)}")
        out.append([_parse_cell(c, path, line, j + 1) for j, c in enumerate(row)])
    if not out:
        raise InputFormatError(f"{path}: no data rows")
    return np.array(out, dtype=float)


def read_wide(path, header: bool = False, delimiter: str | None = None) -> StatTable:
    path, rows = _read_rows(path, delimiter)
    first = 1
    ids = None
    if header:
        if not rows:
            raise InputFormatError(f"{path}:1: missing header row")
        ids = [c.strip() for c in rows[0]]
        rows = rows[1:]
        first = 2
    M = _parse_matrix(path, rows, first)
    if M.shape[0] < 2:
        raise InputFormatError(f"{path}: need an observed row and at least one permutation row")
    if ids is not None and len(ids) != M.shape[1]:
        raise InputFormatError(f"{path}:1: header has {len(ids)} names for {M.shape[1]} columns")
    ids = ids or [str(j + 1) for j in range(M.shape[1])]
    return StatTable(ids, M[0], M[1:])


def read_two_file(observed, perms, header: bool = False, delimiter: str | None = None) -> StatTable:
    opath, orows = _read_rows(observed, delimiter)
    ids = None
    first = 1
    if header:
        if not orows:
            raise InputFormatError(f"{opath}:1: missing header row")
        ids = [c.strip() for c in orows[0]]
        orows = orows[1:]
        first = 2
    obs = _parse_matrix(opath, orows, first)
    t_obs = obs.ravel() if (obs.shape[0] == 1 or obs.shape[1] == 1) else None
    if t_obs is None:
        raise InputFormatError(f"{opath}: observed statistics must be a single row or a single column")
    ppath, prows = _read_rows(perms, delimiter)
    if header:
        prows = prows[1:]
    P = _parse_matrix(ppath, prows, 2 if header else 1)
    if P.shape[1] != t_obs.size:
        raise InputFormatError(f"{ppath}: {P.shape[1]} permutation columns for {t_obs.size} observed statistics")
    if ids is not None and len(ids) != t_obs.size:
        ids = None
    ids = ids or [str(j + 1) for j in range(t_obs.size)]
    return StatTable(ids, t_obs, P)


def fmt_float(x) -> str:
    """Shortest round-trip decimal; ``NA`` for missing."""
    if x is None:
        return "NA"
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "NA"
    return repr(x)


def format_records(records: Sequence) -> str:
    lines = ["\t".join(RECORD_HEADER)]
    for r in records:
        src = getattr(r.source, "value", r.source)
        cells = [r.test_id, fmt_float(r.t_obs), fmt_float(r.p_emp), fmt_float(r.p_tail), fmt_float(r.p_hybrid),
                 fmt_float(r.p_bh), src, fmt_float(r.u), fmt_float(r.k), fmt_float(r.sigma_hat),
                 fmt_float(r.xi_hat), fmt_float(r.epsilon), fmt_float(r.ad_pvalue)]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
