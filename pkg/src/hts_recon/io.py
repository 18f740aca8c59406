"""CSV interchange with atomic writes.

Panels carry a leading ``t`` column and one column per series. Lines starting
with ``#`` are comments (provenance headers) and are skipped on read.
"""
from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatch, NonFiniteInput


def fmt(x) -> str:
    """Shortest round-trip text for a float; ints pass through."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_atomic(path, text: str) -> Path:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


def _render(header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_table(path, header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()) -> Path:
    return write_atomic(path, _render(header, rows, comments))


def read_rows(path) -> tuple[list[str], list[list[str]], list[str]]:
    path = Path(path)
    comments, body = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            elif line.strip():
                body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise ConfigError(f"{path}: no header row")
    return rows[0], rows[1:], comments


def _floats(path, rows: list[list[str]], width: int, first_data_line: int) -> np.ndarray:
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ConfigError(f"{path}: data row {i + first_data_line} has {len(row)} fields, expected {width}")
        try:
            out[i] = [float(v) for v in row]
        except ValueError as exc:
            raise ConfigError(f"{path}: data row {i + first_data_line}: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise NonFiniteInput(f"{path}: non-finite values")
    return out


def write_panel(path, labels: Sequence[str], data, t_index: Optional[Sequence] = None,
                comments: Sequence[str] = ()) -> Path:
    x = np.atleast_2d(np.asarray(data, dtype=float))
    if x.shape[1] != len(labels):
        raise DimensionMismatch(f"{len(labels)} labels for {x.shape[1]} columns")
    t_index = range(x.shape[0]) if t_index is None else t_index
    rows = ([t, *r] for t, r in zip(t_index, x.tolist()))
    return write_table(path, ["t", *labels], rows, comments)


def read_panel(path):
    """Return ``(labels, t_index, data, comments)``."""
    header, rows, comments = read_rows(path)
    if not header or header[0] != "t":
        raise ConfigError(f"{path}: first column must be 't'")
    labels = [h.strip() for h in header[1:]]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"{path}: duplicate column labels")
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    t_index = [r[0] for r in rows]
    data = _floats(path, [r[1:] for r in rows], len(labels), 1)
    return labels, t_index, data, comments


def align_panel(labels: Sequence[str], data: np.ndarray, order: Sequence[str], path="panel") -> np.ndarray:
    """Reorder columns to ``order`` (the hierarchy's row order)."""
    pos = {lab: k for k, lab in enumerate(labels)}
    missing = [lab for lab in order if lab not in pos]
    if missing:
        raise ConfigError(f"{path}: missing series {missing}")
    extra = [lab for lab in labels if lab not in set(order)]
    if extra:
        raise ConfigError(f"{path}: unknown series {extra}")
    return data[:, [pos[lab] for lab in order]]


def write_matrix(path, row_labels: Sequence[str], col_labels: Sequence[str], mat,
                 corner: str = "node", comments: Sequence[str] = ()) -> Path:
    m = np.asarray(mat, dtype=float)
    if m.shape != (len(row_labels), len(col_labels)):
        raise DimensionMismatch(f"matrix {m.shape} vs labels {len(row_labels)} x {len(col_labels)}")
    rows = ([r, *vals] for r, vals in zip(row_labels, m.tolist()))
    return write_table(path, [corner, *col_labels], rows, comments)


def read_matrix(path):
    """Return ``(row_labels, col_labels, matrix, comments)``."""
    header, rows, comments = read_rows(path)
    cols = [h.strip() for h in header[1:]]
    row_labels = [r[0].strip() for r in rows]
    mat = _floats(path, [r[1:] for r in rows], len(cols), 1)
    return row_labels, cols, mat, comments


def read_covariance(path, order: Sequence[str]) -> np.ndarray:
    """Square header-labelled covariance CSV, reordered to ``order``."""
    rows, cols, mat, _ = read_matrix(path)
    if rows != cols:
        raise ConfigError(f"{path}: row and column labels must match")
    sub = align_panel(cols, mat, order, path)
    return align_panel(rows, sub.T, order, path).T


def write_models(path, models, comments: Sequence[str] = ()) -> Path:
    """One row per series: series_id, p, intercept, phi_1..phi_pmax, sigma2, aicc."""
    p_max = max((m.order_p for m in models), default=0)
    header = ["series_id", "p", "intercept", *[f"phi_{i}" for i in range(1, p_max + 1)], "sigma2", "aicc"]
    rows = []
    for m in models:
        coefs = [*m.coefficients.tolist(), *([""] * (p_max - m.order_p))]
        rows.append([m.series_id, m.order_p, m.intercept, *coefs, m.sigma2, m.aicc])
    return write_table(path, header, rows, comments)
