"""CSV/JSON writers and small self-contained SVG plots."""

from __future__ import annotations

import json
import math
from html import escape
from pathlib import Path
from typing import Any, Sequence

from .experiment import EvalRecord

__all__ = [
    "CSV_HEADER",
    "SWEEP_HEADER",
    "format_float",
    "records_to_csv",
    "write_records_csv",
    "write_sweep_csv",
    "write_json",
    "scatter_svg",
    "line_svg",
]

CSV_HEADER = "task_id,c,k,n_eval,weak_xe,strong_xe,misfit_kl,gain,slack"
SWEEP_HEADER = "k,median_diff,mean_diff"


def format_float(v: float) -> str:
    """17 significant digits: enough to round-trip any double."""
    return format(float(v), ".17g")


def records_to_csv(records: Sequence[EvalRecord]) -> str:
    lines = [CSV_HEADER]
    for r in sorted(records, key=lambda r: r.task_id):
        lines.append(",".join([str(r.task_id), str(r.c), str(r.k), str(r.n_eval)]
                              + [format_float(v) for v in (r.weak_xe, r.strong_xe, r.misfit_kl,
                                                           r.gain, r.slack)]))
    return "\n".join(lines) + "\n"


def write_records_csv(path, records: Sequence[EvalRecord]) -> None:
    Path(path).write_text(records_to_csv(records), encoding="utf-8")


def write_sweep_csv(path, rows: Sequence[tuple[int, float | None, float | None]]) -> None:
    def cell(v):
        return "nan" if v is None else format_float(v)

    lines = [SWEEP_HEADER] + [f"{k},{cell(med)},{cell(mean)}" for k, med, mean in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path, obj: Any) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


# --- SVG ----------------------------------------------------------------------------

_W, _H, _PAD = 480, 400, 56


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    out, t = [], first
    while t <= hi + 1e-12 * step:
        out.append(round(t, 12))
        t += step
    return out


class _Frame:
    def __init__(self, xlo, xhi, ylo, yhi, xlog=False):
        if xhi <= xlo:
            xlo, xhi = xlo - 0.5, xhi + 0.5
        if yhi <= ylo:
            ylo, yhi = ylo - 0.5, yhi + 0.5
        self.xlo, self.xhi, self.ylo, self.yhi, self.xlog = xlo, xhi, ylo, yhi, xlog

    def x(self, v):
        return _PAD + (v - self.xlo) / (self.xhi - self.xlo) * (_W - 2 * _PAD)

    def y(self, v):
        return _H - _PAD - (v - self.ylo) / (self.yhi - self.ylo) * (_H - 2 * _PAD)


def _axes(fr: _Frame, title: str, xlabel: str, ylabel: str, xticks=None) -> list[str]:
    out = [
        f'<rect x="{_PAD}" y="{_PAD}" width="{_W - 2 * _PAD}" height="{_H - 2 * _PAD}" '
        'fill="none" stroke="#333"/>',
        f'<text x="{_W / 2}" y="{_PAD / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{_W / 2}" y="{_H - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{_H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {_H / 2})">{escape(ylabel)}</text>',
    ]
    for t, label in (xticks or [(t, f"{t:g}") for t in _ticks(fr.xlo, fr.xhi)]):
        px = fr.x(t)
        out.append(f'<line x1="{px:.2f}" y1="{_H - _PAD}" x2="{px:.2f}" y2="{_H - _PAD + 5}" stroke="#333"/>')
        out.append(f'<text x="{px:.2f}" y="{_H - _PAD + 18}" text-anchor="middle" font-size="10">{label}</text>')
    for t in _ticks(fr.ylo, fr.yhi):
        py = fr.y(t)
        out.append(f'<line x1="{_PAD - 5}" y1="{py:.2f}" x2="{_PAD}" y2="{py:.2f}" stroke="#333"/>')
        out.append(f'<text x="{_PAD - 8}" y="{py + 3:.2f}" text-anchor="end" font-size="10">{t:g}</text>')
    return out


def _document(body: list[str], metadata: dict | None) -> str:
    meta = ""
    if metadata is not None:
        meta = f"<metadata>{escape(json.dumps(_jsonable(metadata), sort_keys=True))}</metadata>\n"
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}" font-family="sans-serif">\n{meta}'
            + "\n".join(body) + "\n</svg>\n")


def scatter_svg(xs: Sequence[float], ys: Sequence[float], title: str = "",
                xlabel: str = "misfit", ylabel: str = "gain", metadata: dict | None = None) -> str:
    """Scatter plot with the ``y = x`` reference line always drawn."""
    vals = [v for v in list(xs) + list(ys) if math.isfinite(v)]
    lo = min(vals + [0.0])
    hi = max(vals + [0.0])
    span = (hi - lo) or 1.0
    lo, hi = lo - 0.05 * span, hi + 0.05 * span
    fr = _Frame(lo, hi, lo, hi)
    body = _axes(fr, title, xlabel, ylabel)
    body.append(f'<line x1="{fr.x(lo):.2f}" y1="{fr.y(lo):.2f}" x2="{fr.x(hi):.2f}" y2="{fr.y(hi):.2f}" '
                'stroke="#c33" stroke-dasharray="4 3"><title>y = x</title></line>')
    for x, y in zip(xs, ys):
        if math.isfinite(x) and math.isfinite(y):
            body.append(f'<circle cx="{fr.x(x):.2f}" cy="{fr.y(y):.2f}" r="3" fill="#1f5fa8" '
                        'fill-opacity="0.7"/>')
    return _document(body, metadata)


def line_svg(xs: Sequence[float], series: dict[str, Sequence[float]], title: str = "",
             xlabel: str = "k", ylabel: str = "", metadata: dict | None = None) -> str:
    """Line plot of one or more series against ``xs`` (log-scaled when all
    ``xs`` are positive and span more than a factor of 10)."""
    xs = [float(x) for x in xs]
    xlog = all(x > 0 for x in xs) and max(xs) / min(xs) > 10
    tx = [math.log10(x) for x in xs] if xlog else xs
    vals = [v for s in series.values() for v in s if v is not None and math.isfinite(v)]
    ylo, yhi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    pad = 0.08 * ((yhi - ylo) or 1.0)
    fr = _Frame(min(tx), max(tx), ylo - pad, yhi + pad, xlog)
    ticks = [(t, f"{x:g}") for t, x in zip(tx, xs)]
    body = _axes(fr, title, xlabel, ylabel, xticks=ticks)
    colors = ["#1f5fa8", "#c33", "#2a8a3a", "#8a2a8a"]
    for j, (name, s) in enumerate(series.items()):
        pts = [(fr.x(t), fr.y(v)) for t, v in zip(tx, s) if v is not None and math.isfinite(v)]
        col = colors[j % len(colors)]
        if pts:
            body.append(f'<polyline fill="none" stroke="{col}" stroke-width="2" points="'
                        + " ".join(f"{a:.2f},{b:.2f}" for a, b in pts) + '"/>')
            body += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{col}"/>' for a, b in pts]
        body.append(f'<text x="{_W - _PAD - 4}" y="{_PAD + 16 + 14 * j}" text-anchor="end" '
                    f'font-size="11" fill="{col}">{escape(name)}</text>')
    return _document(body, metadata)
