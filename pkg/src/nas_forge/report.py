"""CSV tables and static SVG scatter plots.

Everything here is byte-deterministic: fixed column order, ``repr`` floats in
CSV (exact round trip), fixed-precision coordinates in SVG and no timestamps.
"""

from __future__ import annotations

import csv
import io
import math
from fractions import Fraction
from pathlib import Path
from xml.sax.saxutils import escape

from .analyzer import SWEEP_COLUMNS, SweepPoint, SweepTable
from .errors import SchemaError
from .pareto import ParetoArchive, ParetoPoint
from .search_engine import TrialRecord, archive_from_log

TRIAL_COLUMNS = ("trial_id", "candidate", "model", "quality", "reward", "latency_us", "cycles", "params",
                 "macs", "energy_mj", "utilization", "timestamp", "worker_id", "error")
FRONT_COLUMNS = ("rank", "latency_us", "quality", "trial_id", "candidate")

_INT_SWEEP = {"h", "w", "c", "k", "params", "macs", "cycles"}
_OPT_INT_SWEEP = {"n", "p", "g"}


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, Fraction):
        return str(v)
    return str(v)


def _write_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


# -- sweep tables ----------------------------------------------------------------


def sweep_to_csv(table) -> str:
    rows = table.rows if isinstance(table, SweepTable) else table
    return _write_csv(SWEEP_COLUMNS, ([getattr(r, c) for c in SWEEP_COLUMNS] for r in rows))


def sweep_from_csv(text) -> SweepTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != SWEEP_COLUMNS:
        raise SchemaError("header", f"expected columns {','.join(SWEEP_COLUMNS)}")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if len(rec) != len(SWEEP_COLUMNS):
            raise SchemaError(f"line {lineno}", f"expected {len(SWEEP_COLUMNS)} cells, got {len(rec)}")
        kw = {}
        for col, cell in zip(SWEEP_COLUMNS, rec):
            if col == "variant":
                kw[col] = cell
            elif col == "m":
                kw[col] = Fraction(cell)
            elif col in _INT_SWEEP:
                kw[col] = int(cell)
            elif col in _OPT_INT_SWEEP:
                kw[col] = int(cell) if cell else None
            else:
                kw[col] = float(cell)
        rows.append(SweepPoint(**kw))
    return SweepTable(rows)


# -- trial logs and fronts -----------------------------------------------------------


def _trial_row(rec: TrialRecord):
    m = rec.metrics or {}
    return [rec.trial_id, rec.candidate.key(), rec.model, rec.quality,
            rec.reward if math.isfinite(rec.reward) else None,
            m.get("latency_us"), m.get("cycles"), m.get("params"), m.get("macs"), m.get("energy_mj"),
            m.get("utilization"), rec.timestamp, rec.worker_id, rec.error]


def log_to_csv(records) -> str:
    return _write_csv(TRIAL_COLUMNS, (_trial_row(r) for r in sorted(records, key=lambda r: r.trial_id)))


def front_to_csv(archive: ParetoArchive) -> str:
    rows = []
    for rank, p in enumerate(archive.front()):
        rec = p.payload if isinstance(p.payload, TrialRecord) else None
        rows.append([rank, p.latency_us, p.quality, rec.trial_id if rec else None, rec.candidate.key() if rec else None])
    return _write_csv(FRONT_COLUMNS, rows)


# -- svg -------------------------------------------------------------------------

_W, _H, _PAD = 640, 440, 60


def _fmt(v):
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _tick(v):
    return f"{v:.4g}"


def scatter_svg(points, front, title, xlabel, ylabel) -> str:
    """Scatter of ``points`` ((x, y) pairs) with ``front`` drawn as a polyline."""
    points = list(points)
    front = sorted(front)
    xs = [x for x, _ in points + front] or [0.0, 1.0]
    ys = [y for _, y in points + front] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1

    def sx(x):
        return _PAD + (x - x0) / (x1 - x0) * (_W - 2 * _PAD)

    def sy(y):
        return _H - _PAD - (y - y0) / (y1 - y0) * (_H - 2 * _PAD)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        "<style>.point{fill:#4c72b0;fill-opacity:0.6}.front{fill:none;stroke:#c44e52;stroke-width:2}"
        ".axis{stroke:#333}text{font-family:sans-serif;font-size:12px}</style>",
        f'<text x="{_W // 2}" y="24" text-anchor="middle">{escape(title)}</text>',
        f'<line class="axis" x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}"/>',
        f'<line class="axis" x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}"/>',
        f'<text x="{_W // 2}" y="{_H - 16}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{_H // 2}" text-anchor="middle" transform="rotate(-90 16 {_H // 2})">{escape(ylabel)}</text>',
        f'<text x="{_PAD}" y="{_H - _PAD + 16}" text-anchor="middle">{_tick(x0)}</text>',
        f'<text x="{_W - _PAD}" y="{_H - _PAD + 16}" text-anchor="middle">{_tick(x1)}</text>',
        f'<text x="{_PAD - 6}" y="{_H - _PAD}" text-anchor="end">{_tick(y0)}</text>',
        f'<text x="{_PAD - 6}" y="{_PAD}" text-anchor="end">{_tick(y1)}</text>',
    ]
    for x, y in points:
        out.append(f'<circle class="point" cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3"/>')
    if front:
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in front)
        out.append(f'<polyline class="front" points="{pts}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def svg_vertex_count(svg: str) -> int:
    """Number of vertices in the front polyline (0 if there is none)."""
    marker = 'class="front" points="'
    i = svg.find(marker)
    if i < 0:
        return 0
    pts = svg[i + len(marker):svg.index('"', i + len(marker))]
    return len(pts.split())


def sweep_svg(table: SweepTable) -> str:
    archive = ParetoArchive()
    for r in table.rows:
        archive.insert(ParetoPoint(float(r.params), r.latency_us))
    return scatter_svg(
        [(r.latency_us, r.params) for r in table.rows],
        [(p.latency_us, p.quality) for p in archive.front()],
        "IBN block sweep", "latency (us)", "parameters",
    )


def archive_svg(archive: ParetoArchive, points=None, title="pareto front") -> str:
    pts = [(p.latency_us, p.quality) for p in (points if points is not None else archive.front())]
    return scatter_svg(pts, [(p.latency_us, p.quality) for p in archive.front()], title, "latency (us)", "quality")


def log_svg(records) -> str:
    ok = sorted((r for r in records if r.ok and r.metrics), key=lambda r: r.trial_id)
    archive = archive_from_log(ok)
    pts = [ParetoPoint(r.quality, r.metrics["latency_us"]) for r in ok]
    return archive_svg(archive, pts, title="search trials")


# -- dispatch --------------------------------------------------------------------


def emit_report(data, fmt, path):
    """Write ``data`` (a SweepTable, a list of TrialRecord or a ParetoArchive)
    as csv or svg to ``path``. Returns the path."""
    if fmt not in ("csv", "svg"):
        raise ValueError(f"unknown report format {fmt!r}")
    if isinstance(data, SweepTable):
        if not data.rows:
            raise ValueError("nothing to report: empty sweep table")
        text = sweep_to_csv(data) if fmt == "csv" else sweep_svg(data)
    elif isinstance(data, ParetoArchive):
        if not len(data):
            raise ValueError("nothing to report: empty archive")
        text = front_to_csv(data) if fmt == "csv" else archive_svg(data)
    else:
        records = list(data)
        if not records:
            raise ValueError("nothing to report: empty trial log")
        text = log_to_csv(records) if fmt == "csv" else log_svg(records)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path
