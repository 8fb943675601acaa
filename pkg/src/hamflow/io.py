"""CSV / JSON output helpers. Floats are written with ``repr`` (shortest round-trip form)."""

import csv
import datetime
import json
import os
import platform

import numpy as np

from .errors import ConfigError


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_points(path, x):
    x = np.asarray(x, dtype=np.float64)
    x = x[:, None] if x.ndim == 1 else x
    write_csv(path, [f"x{j}" for j in range(x.shape[1])], x.tolist())


def read_points(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read samples: {exc}") from None
    if len(rows) < 2:
        raise ConfigError(f"{path}: expected a header and at least one row")
    try:
        return np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric value ({exc})") from None


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def run_metadata(**extra):
    """Timestamps and environment live only here, never in checkpoints or tables."""
    from . import __version__, kernels

    return {"created": datetime.datetime.now(datetime.timezone.utc).isoformat(), "version": __version__,
            "python": platform.python_version(), "numpy": np.__version__, "kernel_backend": kernels.BACKEND_NAME,
            **extra}


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
