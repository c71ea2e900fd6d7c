"""Built-in toy datasets, CSV persistence, and SVG scatter/trajectory plots.

Generative formulas of the built-ins (all deterministic under a seeded
generator):

* ``ring8``         8 Gaussian modes, std ``noise`` (default 0.1), centers
                    at angle ``2*pi*k/8`` on the circle of radius 1; mode
                    picked uniformly per point.
* ``two_moons``     upper arc ``(cos a, sin a)`` vs lower arc
                    ``(1 - cos a, 0.5 - sin a)``, ``a`` uniform on
                    [0, pi], class picked 50/50, Gaussian jitter ``noise``
                    (default 0.05).
* ``checkerboard``  uniform mass on the cells of ``[-2, 2]^2`` whose
                    integer corner parities agree.
* ``spiral``        radius ``0.4 * a`` at angle ``a`` uniform on
                    [pi/4, 3*pi], jitter ``noise`` (default 0.05).
* ``single_point``  every row equals ``point`` (default (1, -0.5)).
* ``two_points``    rows alternate between ``-offset`` and ``+offset``
                    (default offset 1 in d=1).

CSV format: header ``x0,x1,...``, one point per line, floats written with
17 significant digits so a write/read round trip is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import CsvParseError, InvalidInput

BUILTIN_NAMES = (
    "ring8",
    "two_moons",
    "checkerboard",
    "spiral",
    "single_point",
    "two_points",
)


@dataclass
class Dataset:
    name: str
    points: np.ndarray  # (n, d)
    holdout: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.size == 0:
            raise InvalidInput("dataset must be non-empty")

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]


def builtin(name: str, n: int, rng: np.random.Generator, **params) -> Dataset:
    """Generate a named toy dataset with ``n`` points."""
    if n < 1:
        raise InvalidInput("dataset size must be >= 1")
    if name == "ring8":
        noise = params.pop("noise", 0.1)
        radius = params.pop("radius", 1.0)
        _reject_params(name, params)
        mode = rng.integers(0, 8, size=n)
        angle = 2.0 * np.pi * mode / 8.0
        centers = radius * np.stack([np.cos(angle), np.sin(angle)], axis=1)
        pts = centers + noise * rng.standard_normal((n, 2))
    elif name == "two_moons":
        noise = params.pop("noise", 0.05)
        _reject_params(name, params)
        upper = rng.integers(0, 2, size=n).astype(bool)
        a = rng.uniform(0.0, np.pi, size=n)
        x = np.where(upper, np.cos(a), 1.0 - np.cos(a))
        y = np.where(upper, np.sin(a), 0.5 - np.sin(a))
        pts = np.stack([x, y], axis=1) + noise * rng.standard_normal((n, 2))
    elif name == "checkerboard":
        _reject_params(name, params)
        # cells of [-2,2]^2 with even parity of the lower-left corner
        cells = np.array(
            [(i, j) for i in range(-2, 2) for j in range(-2, 2) if (i + j) % 2 == 0]
        )
        pick = rng.integers(0, len(cells), size=n)
        pts = cells[pick] + rng.uniform(0.0, 1.0, size=(n, 2))
    elif name == "spiral":
        noise = params.pop("noise", 0.05)
        _reject_params(name, params)
        a = rng.uniform(np.pi / 4.0, 3.0 * np.pi, size=n)
        r = 0.4 * a
        pts = np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
        pts += noise * rng.standard_normal((n, 2))
    elif name == "single_point":
        point = np.asarray(params.pop("point", (1.0, -0.5)), dtype=float)
        _reject_params(name, params)
        pts = np.tile(point, (n, 1))
    elif name == "two_points":
        offset = np.atleast_1d(np.asarray(params.pop("offset", (1.0,)), dtype=float))
        _reject_params(name, params)
        sign = np.where(np.arange(n) % 2 == 0, -1.0, 1.0)
        pts = sign[:, None] * offset[None, :]
    else:
        raise InvalidInput(
            f"unknown dataset {name!r}; valid names: {', '.join(BUILTIN_NAMES)}"
        )
    return Dataset(name=name, points=pts)


def _reject_params(name, params):
    if params:
        raise InvalidInput(f"unknown parameters for {name}: {sorted(params)}")


def split_holdout(dataset: Dataset, fraction: float, rng: np.random.Generator) -> Dataset:
    """Move a random ``fraction`` of the points into the holdout slot."""
    if not 0.0 < fraction < 1.0:
        raise InvalidInput("holdout fraction must be in (0, 1)")
    n = len(dataset)
    k = max(1, int(round(fraction * n)))
    if k >= n:
        raise InvalidInput("holdout fraction leaves no training points")
    perm = rng.permutation(n)
    return Dataset(
        name=dataset.name,
        points=dataset.points[perm[k:]],
        holdout=dataset.points[perm[:k]],
    )


def write_csv(path, points: np.ndarray):
    """Write points as CSV with header ``x0,...,x{d-1}``; 17 digit floats."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points.shape[1]
    lines = [",".join(f"x{j}" for j in range(d))]
    for row in points:
        lines.append(",".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path) -> Dataset:
    """Read a points CSV; parse errors carry the 1-based line number."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines()]
    if not lines or not lines[0].strip():
        raise CsvParseError("no header")
    header = [c.strip() for c in lines[0].split(",")]
    want = [f"x{j}" for j in range(len(header))]
    if header != want:
        raise CsvParseError(f"expected header {','.join(want)}, got {lines[0]!r}", line=1)
    d = len(header)
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        if not ln.strip():
            continue
        cells = ln.split(",")
        if len(cells) != d:
            raise CsvParseError(f"expected {d} columns, got {len(cells)}", line=i)
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise CsvParseError(f"non-numeric cell in {ln!r}", line=i) from None
    if not rows:
        raise CsvParseError("no data rows")
    return Dataset(name=str(path), points=np.asarray(rows))


@dataclass(frozen=True)
class SvgStyle:
    width: int = 480
    height: int = 480
    margin_frac: float = 0.05
    point_radius: float = 2.0
    point_color: str = "#1f6fb2"
    line_color: str = "#c23b22"
    line_width: float = 1.0
    background: str = "#ffffff"


def _fmt(v: float) -> str:
    return format(float(v), ".6g")


def emit_svg_scatter(data, path, style: SvgStyle = SvgStyle(), trajectories=None):
    """Write a deterministic SVG 1.1 scatter (plus optional trajectories).

    ``data`` is an (n, d) point array (may be empty); ``trajectories`` an
    optional sequence of records with a ``states`` attribute or plain
    (k, d) arrays.  Only the first two coordinates are drawn; higher
    dimensional input is projected and a comment in the file says so.
    """
    pts = np.asarray(data, dtype=float)
    if pts.size == 0:
        pts = np.zeros((0, 2))
    pts = np.atleast_2d(pts)
    projected = pts.shape[1] > 2
    if pts.shape[1] == 1:
        pts = np.column_stack([pts[:, 0], np.zeros(len(pts))])
    elif pts.shape[1] > 2:
        pts = pts[:, :2]

    trail_arrays = []
    for tr in trajectories or []:
        arr = np.atleast_2d(np.asarray(getattr(tr, "states", tr), dtype=float))
        if arr.shape[1] == 1:
            arr = np.column_stack([arr[:, 0], np.zeros(len(arr))])
        elif arr.shape[1] > 2:
            projected = True
            arr = arr[:, :2]
        trail_arrays.append(arr)

    stack = [pts] + trail_arrays
    allpts = np.vstack([a for a in stack if len(a)]) if any(len(a) for a in stack) else np.zeros((0, 2))
    if len(allpts):
        lo = allpts.min(axis=0)
        hi = allpts.max(axis=0)
    else:
        lo = np.array([-1.0, -1.0])
        hi = np.array([1.0, 1.0])
    span = hi - lo
    pad = np.where(span > 0.0, style.margin_frac * span, 1.0)
    lo = lo - pad
    hi = hi + pad

    def to_px(p):
        sx = (p[0] - lo[0]) / (hi[0] - lo[0]) * style.width
        sy = style.height - (p[1] - lo[1]) / (hi[1] - lo[1]) * style.height
        return sx, sy

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{style.width}" height="{style.height}" '
        f'viewBox="0 0 {style.width} {style.height}">',
    ]
    if projected:
        parts.append("<!-- data projected to the first two coordinates -->")
    parts.append(
        f'<rect x="0" y="0" width="{style.width}" height="{style.height}" '
        f'fill="{style.background}"/>'
    )
    # axes through the data origin when visible, else along the frame
    x0px, y0px = to_px((max(lo[0], min(0.0, hi[0])), max(lo[1], min(0.0, hi[1]))))
    parts.append(
        f'<line x1="0" y1="{_fmt(y0px)}" x2="{style.width}" y2="{_fmt(y0px)}" '
        'stroke="#cccccc" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{_fmt(x0px)}" y1="0" x2="{_fmt(x0px)}" y2="{style.height}" '
        'stroke="#cccccc" stroke-width="1"/>'
    )
    for arr in trail_arrays:
        if len(arr) == 0:
            continue
        coords = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in map(to_px, arr))
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{style.line_color}" '
            f'stroke-width="{_fmt(style.line_width)}"/>'
        )
    for p in pts:
        px, py = to_px(p)
        parts.append(
            f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="{_fmt(style.point_radius)}" '
            f'fill="{style.point_color}"/>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
