"""CSV tables and standalone SVG line charts.

Both formats are byte-deterministic: numbers go through fixed format
strings, keys are sorted, line endings are LF.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

from .. import __version__
from ..engine import TrajectoryRecord
from ..errors import FileError, InsufficientDataError

TRAJECTORY_COLUMNS = ("t", "delta_E", "P", "C", "S", "trace_err", "min_eig")
SWEEP_COLUMNS = ("axis", "E_s", "P_max", "t_steady")


def fmt(x) -> str:
    """17 significant digits, shortest exponent form, '.' decimal separator."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _config_line(config) -> str:
    if config is None:
        return ""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), allow_nan=True)
    return f"# config: {text}\n"


def _table(data):
    """(columns, rows) for a trajectory record or a sweep table."""
    if isinstance(data, TrajectoryRecord):
        if len(data) == 0:
            raise InsufficientDataError("empty trajectory record")
        cols = {
            "t": data.times,
            "delta_E": data.samples.get("delta_E"),
            "P": data.samples.get("P"),
            "C": data.samples.get("C"),
            "S": data.samples.get("S"),
            "trace_err": data.diagnostics.get("trace_err"),
            "min_eig": data.diagnostics.get("min_eig"),
        }
        missing = [k for k, v in cols.items() if v is None]
        if missing:
            raise InsufficientDataError(f"record lacks columns {missing}")
        return list(TRAJECTORY_COLUMNS), [list(r) for r in zip(*cols.values())]
    if not data.values:
        raise InsufficientDataError("empty sweep table")
    columns = list(SWEEP_COLUMNS)
    rows = [[v, e, p, t] for v, e, p, t, _ in data.rows()]
    if data.E_d is not None:
        columns.append("E_d")
        rows = [r + [ed] for r, ed in zip(rows, data.E_d)]
    return columns, rows


def csv_text(data, config=None) -> str:
    columns, rows = _table(data)
    lines = [f"# qbatt {__version__}\n", _config_line(config), ",".join(columns) + "\n"]
    lines += [",".join(fmt(x) for x in row) + "\n" for row in rows]
    return "".join(lines)


def _write(path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise FileError(f"cannot write {path}: {exc}") from exc
    return path


def emit_csv(data, path, config=None) -> Path:
    """Write a trajectory or sweep table; nothing is created for empty data."""
    return _write(path, csv_text(data, config))


# SVG --------------------------------------------------------------------------

_W, _H = 640, 220
_PAD_L, _PAD_R, _PAD_T, _PAD_B = 70, 130, 24, 40
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    out, v = [], first
    while v <= hi + 1e-9 * step:
        out.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return out


def _panel(y0, x, series, ylabel, xlabel):
    """One chart panel at vertical offset ``y0``; ``series`` is [(name, ys)]."""
    xs = [float(v) for v in x]
    finite = [float(v) for _, ys in series for v in ys if math.isfinite(v)]
    ylo, yhi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if yhi - ylo < 1e-12 * max(1.0, abs(yhi)):
        ylo, yhi = ylo - 0.5, yhi + 0.5
    else:
        span = yhi - ylo
        ylo, yhi = ylo - 0.05 * span, yhi + 0.05 * span
    xlo, xhi = min(xs), max(xs)
    if xhi <= xlo:
        xhi = xlo + 1.0
    pw, ph = _W - _PAD_L - _PAD_R, _H - _PAD_T - _PAD_B

    def px(v):
        return _PAD_L + (v - xlo) / (xhi - xlo) * pw

    def py(v):
        return y0 + _PAD_T + (yhi - v) / (yhi - ylo) * ph

    out = [
        f'<rect x="{_PAD_L}" y="{y0 + _PAD_T}" width="{pw}" height="{ph}" '
        'fill="none" stroke="#333" stroke-width="1"/>'
    ]
    for tv in _ticks(xlo, xhi):
        out.append(f'<line x1="{px(tv):.2f}" y1="{y0 + _PAD_T + ph}" x2="{px(tv):.2f}" '
                   f'y2="{y0 + _PAD_T + ph + 4}" stroke="#333"/>')
        out.append(f'<text x="{px(tv):.2f}" y="{y0 + _PAD_T + ph + 16}" '
                   f'text-anchor="middle">{tv:.4g}</text>')
    for tv in _ticks(ylo, yhi):
        out.append(f'<line x1="{_PAD_L - 4}" y1="{py(tv):.2f}" x2="{_PAD_L}" '
                   f'y2="{py(tv):.2f}" stroke="#333"/>')
        out.append(f'<text x="{_PAD_L - 6}" y="{py(tv) + 4:.2f}" '
                   f'text-anchor="end">{tv:.4g}</text>')
    out.append(f'<text x="{_PAD_L + pw / 2:.1f}" y="{y0 + _H - 6}" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text transform="translate(16,{y0 + _PAD_T + ph / 2:.1f}) rotate(-90)" '
               f'text-anchor="middle">{escape(ylabel)}</text>')
    for i, (name, ys) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        pts, segs = [], []
        for xv, yv in zip(xs, ys):
            if math.isfinite(yv):
                pts.append(f"{px(xv):.2f},{py(float(yv)):.2f}")
            elif pts:
                segs.append(pts)
                pts = []
        if pts:
            segs.append(pts)
        for seg in segs:
            d = "M" + " L".join(seg)
            out.append(f'<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5">'
                       f'<title>{escape(name)}</title></path>')
        ly = y0 + _PAD_T + 14 + 16 * i
        out.append(f'<line x1="{_W - _PAD_R + 10}" y1="{ly - 4}" x2="{_W - _PAD_R + 30}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _PAD_R + 34}" y="{ly}">{escape(name)}</text>')
    return out


def _panels(data):
    if isinstance(data, TrajectoryRecord):
        if len(data) < 2:
            raise InsufficientDataError("a chart needs at least two samples")
        s = data.samples
        return data.times, [
            ([("delta_E", s["delta_E"])], "Energy (ħω)"),
            ([("P", s["P"])], "Power (ħω²)"),
            ([("C", s["C"]), ("S", s["S"])], "C, S (dimensionless)"),
        ], "t (1/ω)"
    if len(data.values) < 2:
        raise InsufficientDataError("a chart needs at least two sweep points")
    panels = [([("E_s", data.E_s)], "Energy (ħω)"),
              ([("P_max", data.P_max)], "Power (ħω²)")]
    if data.E_d is not None:
        panels.insert(1, ([("E_d", data.E_d)], "Energy (ħω)"))
    return data.values, panels, data.axis


def svg_text(data, config=None, title: str = "") -> str:
    x, panels, xlabel = _panels(data)
    height = _H * len(panels) + (24 if title else 0)
    top = 24 if title else 0
    meta = json.dumps(config, sort_keys=True, separators=(",", ":"), allow_nan=True) \
        if config is not None else "{}"
    parts = [
        '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{height}" '
        f'viewBox="0 0 {_W} {height}" font-family="sans-serif" font-size="11">',
        f"<metadata>{escape(meta)}</metadata>",
        f'<rect width="{_W}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{_W / 2:.1f}" y="16" text-anchor="middle" '
                     f'font-size="13">{escape(title)}</text>')
    for i, (series, ylabel) in enumerate(panels):
        parts += _panel(top + i * _H, x, series, ylabel, xlabel)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_svg(data, path, config=None, title: str = "") -> Path:
    """Standalone line chart; the resolved config is stored in ``<metadata>``."""
    return _write(path, svg_text(data, config, title))


def write_outputs(result, out_dir, svg: bool = False) -> list[Path]:
    """Files for a :class:`~qbatt.runner.scenarios.RunResult`."""
    cfg = result.config
    config = cfg.to_dict()
    stem = cfg.label or cfg.scenario
    out = Path(out_dir)
    files = []
    items = []
    if result.table is not None:
        items.append((f"{stem}_sweep", result.table))
    if result.charge_record is not None:
        items.append((f"{stem}_charge", result.charge_record))
    if result.record is not None:
        name = f"{stem}_discharge" if cfg.scenario == "self-discharge" else stem
        items.append((name, result.record))
    for name, data in items:
        files.append(emit_csv(data, out / f"{name}.csv", config))
        if svg:
            files.append(emit_svg(data, out / f"{name}.svg", config, title=name))
    return files
