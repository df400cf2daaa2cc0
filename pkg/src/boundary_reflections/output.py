"""CSV files with provenance headers, and gnuplot-ready companions."""

from __future__ import annotations

import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ERROR_COLUMNS = ("iter", "error_seq", "error_par", "error_avgpar")
SWEEP_COLUMNS = ("R", "seq_coef", "par_coef", "avgpar_coef")
PROJECTION_COLUMNS = ("iter", "error_alternating", "error_averaged")


class OutputError(ValueError):
    pass


def fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % float(value)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], meta: dict) -> Path:
    """Write ``# key=value`` header lines, the column line, then the rows."""
    lines = [f"# {k}={v}" for k, v in meta.items()]
    lines.append(",".join(columns))
    for row in rows:
        if len(row) != len(columns):
            raise OutputError("row length does not match the columns")
        lines.append(",".join(fmt(v) for v in row))
    p = Path(path)
    _atomic_write(p, "\n".join(lines) + "\n")
    return p


def read_csv(path):
    """Return ``(meta, columns, data)`` with ``data`` as a float array."""
    meta, columns, rows = {}, None, []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
        elif columns is None:
            columns = tuple(c.strip() for c in line.split(","))
        else:
            rows.append([float(v) for v in line.split(",")])
    if columns is None or not rows:
        raise OutputError(f"{path}: no data rows")
    return meta, columns, np.array(rows)


def _fit(x, y):
    ok = np.isfinite(y) & (y > 0)
    slope, intercept = np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)
    return float(slope), float(intercept)


def emit_plotdata(csv_path, out_dir=None, fit_count: int = 5):
    """Write ``<stem>.dat`` and ``<stem>.gp`` next to the CSV (or in ``out_dir``).

    Error tables get a log-scale y axis; the sweep table gets log-log axes
    and a fitted power law per form, fitted on the ``fit_count`` largest
    distances.  Returns ``(dat_path, script_path, slopes)``.
    """
    meta, columns, data = read_csv(csv_path)
    src = Path(csv_path)
    out = Path(out_dir) if out_dir is not None else src.parent
    stem = src.stem
    dat, gp = out / f"{stem}.dat", out / f"{stem}.gp"

    dat_lines = ["# " + " ".join(columns)]
    for row in data:
        dat_lines.append(" ".join("nan" if not math.isfinite(v) else fmt(v) for v in row))
    dat_text = "\n".join(dat_lines) + "\n"

    slopes = {}
    script = ["set terminal pngcairo size 800,600", f"set output '{stem}.png'", "set key outside"]
    if columns == SWEEP_COLUMNS:
        x = data[:, 0]
        idx = np.argsort(x)[-min(fit_count, len(x)):]
        script += ["set logscale xy", "set xlabel 'distance'", "set ylabel 'contraction factor'"]
        plots = []
        for j, name in enumerate(columns[1:], start=1):
            slope, intercept = _fit(x[idx], data[idx, j])
            slopes[name] = slope
            fn = f"f{j}(x) = exp({fmt(intercept)}) * x**({fmt(slope)})"
            script.append(fn)
            script.append(f"print sprintf('{name} slope = %.6f', {fmt(slope)})")
            plots.append(f"'{dat.name}' using 1:{j + 1} with points title '{name}'")
            plots.append(f"f{j}(x) with lines title sprintf('fit %.3f', {fmt(slope)})")
        script.append("plot " + ", \\\n     ".join(plots))
    elif columns[0] == "iter" and all(c.startswith("error") for c in columns[1:]):
        script += ["set logscale y", "set xlabel 'cycle'", "set ylabel 'error'", "set format y '10^{%L}'"]
        plots = [
            f"'{dat.name}' using 1:{j + 1} with linespoints title '{name}'"
            for j, name in enumerate(columns[1:], start=1)
        ]
        script.append("plot " + ", \\\n     ".join(plots))
    else:
        raise OutputError(f"{csv_path}: unknown schema {','.join(columns)}")
    gp_text = "\n".join(script) + "\n"

    # both files or neither
    _atomic_write(dat, dat_text)
    try:
        _atomic_write(gp, gp_text)
    except BaseException:
        dat.unlink(missing_ok=True)
        raise
    return dat, gp, slopes
