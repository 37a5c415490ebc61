"""CSV and SVG emission with reproducibility metadata."""

from __future__ import annotations

import csv
import datetime as _dt
import io
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def emit_csv(rows: Iterable[dict], path, columns: Optional[Sequence[str]] = None, meta: Optional[dict] = None,
             reproducible: bool = False) -> Path:
    """Write ``rows`` as CSV with ``# key=value`` comment lines on top.

    Floats are written with ``repr`` so re-reading is bit-exact. A timestamp
    comment is added unless ``reproducible``.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to write")
    columns = list(columns) if columns is not None else list(rows[0].keys())
    buf = io.StringIO()
    meta = dict(meta or {})
    if meta:
        buf.write("# " + " ".join(f"{k}={meta[k]}" for k in sorted(meta)) + "\n")
    if not reproducible:
        buf.write(f"# generated {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row.get(c, "")) for c in columns])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> tuple[dict, list[dict]]:
    """Return ``(meta, rows)``; numeric cells come back as floats."""
    meta, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        else:
            body.append(line)
    reader = csv.DictReader(body)
    rows = []
    for rec in reader:
        out = {}
        for k, v in rec.items():
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
        rows.append(out)
    return meta, rows


def emit_plot(x: Sequence[float], series: dict, path, shade: Optional[Sequence[bool]] = None,
              xlabel: str = "r", ylabel: str = "", title: str = "", logx: bool = False) -> Path:
    """Line plot of ``series`` (label -> values) against x as SVG; ``shade`` marks cells to highlight."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = np.asarray(x, dtype=float)
    with matplotlib.rc_context({"svg.hashsalt": "nevlab", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, y in series.items():
            ax.plot(x, np.asarray(y, dtype=float), marker="o", ms=3, label=label)
        if shade is not None:
            shade = np.asarray(shade, dtype=bool)
            for i in np.nonzero(shade)[0]:
                lo = x[i]
                hi = x[i + 1] if i + 1 < len(x) else x[i] + (x[i] - x[i - 1] if i else 1.0)
                ax.axvspan(lo, hi, color="tab:red", alpha=0.2, lw=0)
        if logx:
            ax.set_xscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
