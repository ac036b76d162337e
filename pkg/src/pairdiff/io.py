"""Data, truth and model files.

Data CSV: header ``y,w,x1,...,xp``, one observation per row. Truth sidecar:
``field,index,value`` rows with ``field`` in {beta, g} and 1-based
indices. Model JSON: sparse nonzero coefficients with 1-based indices.
Floats are written with 17 significant digits so reading back is exact.
"""

from __future__ import annotations

import csv
import json
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .core import Dataset
from .errors import DataError


def fmt(x) -> str:
    return "%.17g" % x


def truth_path(data_path) -> Path:
    p = Path(data_path)
    return p.with_name(p.stem + ".truth" + p.suffix)


def read_data_csv(path, log_y: bool = False) -> Dataset:
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        p = len(header) - 2
        expected = ["y", "w"] + [f"x{k}" for k in range(1, p + 1)]
        if p < 1 or header != expected:
            raise DataError(f"{path}: line 1: header must be y,w,x1..xp in order, got "
                            f"{','.join(header[:6])}{',...' if len(header) > 6 else ''}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != p + 2:
                raise DataError(f"{path}: line {lineno}: expected {p + 2} columns, got {len(row)}")
            vals = []
            for col, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    v = float("nan")
                if not np.isfinite(v):
                    raise DataError(f"{path}: line {lineno}, column {col + 1} ({header[col]}): "
                                    f"cannot parse {cell!r} as a finite number")
                vals.append(v)
            rows.append(vals)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 data rows, got {len(rows)}")
    A = np.array(rows)
    Y = A[:, 0]
    if log_y:
        if np.any(Y <= 0):
            raise DataError(f"{path}: --log-y needs a positive response")
        Y = np.log(Y)
    return Dataset(A[:, 2:], Y, A[:, 1])


def write_data_csv(path, data: Dataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "w"] + [f"x{k}" for k in range(1, data.p + 1)])
        for yi, wi, xi in zip(data.Y, data.W, data.X):
            w.writerow([fmt(yi), fmt(wi)] + [fmt(v) for v in xi])


def write_truth_csv(path, data: Dataset) -> None:
    if data.beta_star is None or data.g_values is None:
        raise DataError("dataset carries no truth to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["field", "index", "value"])
        for k, v in enumerate(data.beta_star, start=1):
            w.writerow(["beta", k, fmt(v)])
        for k, v in enumerate(data.g_values, start=1):
            w.writerow(["g", k, fmt(v)])


def read_truth_csv(path):
    """Returns ``(beta_star, g_values)`` from a truth sidecar."""
    beta, g = {}, {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                target = {"beta": beta, "g": g}[row["field"]]
                target[int(row["index"])] = float(row["value"])
            except (KeyError, ValueError, TypeError):
                raise DataError(f"{path}: line {lineno}: malformed truth row") from None
    def dense(d):
        return np.array([d[k] for k in range(1, len(d) + 1)])
    return dense(beta), dense(g)


def attach_truth(data: Dataset, path) -> Dataset:
    beta, g = read_truth_csv(path)
    return Dataset(data.X, data.Y, data.W, beta_star=beta, g_values=g)


def _timestamp(source=None) -> str:
    # reproducible: SOURCE_DATE_EPOCH, else the data file's mtime
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        t = float(epoch)
    elif source is not None and Path(source).exists():
        t = Path(source).stat().st_mtime
    else:
        t = 0.0
    return datetime.fromtimestamp(t, tz=timezone.utc).isoformat()


def model_to_dict(fit, n: int, p: int, kernel: str, config: dict, source=None) -> dict:
    nz = np.flatnonzero(fit.beta_hat)
    return {
        "method": fit.method,
        "h": fit.h_used,
        "lambda": fit.lambda_used,
        "beta": [[int(k) + 1, float(fit.beta_hat[k])] for k in nz],
        "p": int(p),
        "n": int(n),
        "kernel": kernel,
        "objective": fit.objective,
        "kkt_violation": fit.kkt_violation,
        "converged": bool(fit.converged),
        "timestamp": _timestamp(source),
        "config": config,
    }


def save_model(path, model: dict) -> None:
    Path(path).write_text(json.dumps(model, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> dict:
    try:
        model = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from None
    idx = [k for k, _ in model["beta"]]
    if any(b <= a for a, b in zip(idx, idx[1:])) or any(k < 1 or k > model["p"] for k in idx):
        raise DataError(f"{path}: beta indices must be strictly increasing and within 1..p")
    return model


def model_beta(model: dict) -> np.ndarray:
    beta = np.zeros(int(model["p"]))
    for k, v in model["beta"]:
        beta[int(k) - 1] = float(v)
    return beta
