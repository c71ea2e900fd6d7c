"""Sample-quality metrics, the composite ranking index, and the
trajectory-divergence indicator.

Sliced Wasserstein (mean 1-D transport cost over random projections) and
energy distance stand in for classifier-based image metrics at desk
scale.  The composite index z-scores a table of metrics column by column,
flips the sign of lower-is-better columns, weights each column by the
coefficient of variation of its raw values (more spread, more say), and
squashes the weighted sum through a logistic to (0, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import wasserstein_distance

from .errors import DegenerateInput, InvalidInput
from .ode import Method, SolverConfig, integrate_batch
from .sampler import PriorSpec, sample_terminal

_ENERGY_SUBSAMPLE = 2048


@dataclass
class MetricReport:
    sliced_wasserstein: float
    energy_distance: float
    nfe: int
    wall_time: float = 0.0

    CSV_COLUMNS = ("sliced_wasserstein", "energy_distance", "nfe")

    def csv_row(self) -> str:
        return (
            f"{self.sliced_wasserstein:.17g},{self.energy_distance:.17g},{self.nfe}"
        )


@dataclass
class IndexColumn:
    name: str
    higher_is_better: bool
    values: np.ndarray


@dataclass
class IndexTable:
    """Rows keyed by overlap count; columns of metrics plus the index."""

    keys: list
    columns: list
    index: Optional[np.ndarray] = None
    status: list = dataclass_field(default_factory=list)

    def column(self, name: str) -> IndexColumn:
        for col in self.columns:
            if col.name == name:
                return col
        raise KeyError(name)


def sliced_wasserstein(
    a: np.ndarray,
    b: np.ndarray,
    n_projections: int,
    rng: np.random.Generator,
) -> float:
    """Mean 1-D transport cost of the two samples over random directions."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise InvalidInput("sample sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise InvalidInput(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    d = a.shape[1]
    if d == 1:
        return float(wasserstein_distance(a[:, 0], b[:, 0]))
    dirs = rng.standard_normal((n_projections, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    total = 0.0
    for u in dirs:
        total += wasserstein_distance(a @ u, b @ u)
    return float(total / n_projections)


def energy_distance(
    a: np.ndarray,
    b: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    max_points: int = _ENERGY_SUBSAMPLE,
) -> float:
    """Squared energy distance ``2 E|X-Y| - E|X-X'| - E|Y-Y'|``.

    Pairwise distances are quadratic in the sample count, so inputs larger
    than ``max_points`` are deterministically subsampled (seeded ``rng``
    required in that case).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise InvalidInput(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")

    def cut(x):
        if x.shape[0] <= max_points:
            return x
        if rng is None:
            raise InvalidInput("subsampling needs an rng")
        return x[rng.permutation(x.shape[0])[:max_points]]

    a, b = cut(a), cut(b)
    exy = float(np.mean(cdist(a, b)))
    exx = float(np.mean(cdist(a, a)))
    eyy = float(np.mean(cdist(b, b)))
    return 2.0 * exy - exx - eyy


def composite_index(table: IndexTable) -> IndexTable:
    """Fill in the composite index column of a metric table.

    Columns are z-scored (population std), sign-flipped when lower values
    are better, weighted by the coefficient of variation of the raw
    column, summed, and mapped to (0, 1) by a logistic.  A zero-variance
    column is degenerate input and is reported by name.
    """
    if len(table.keys) < 2:
        raise DegenerateInput("composite index needs at least 2 rows")
    scores = np.zeros(len(table.keys))
    weights = []
    signed = []
    for col in table.columns:
        v = np.asarray(col.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise DegenerateInput(f"column {col.name} has non-finite entries")
        mean = float(np.mean(v))
        std = float(np.std(v))
        if std == 0.0:
            raise DegenerateInput(f"column {col.name} has zero variance")
        z = (v - mean) / std
        signed.append(z if col.higher_is_better else -z)
        weights.append(std / max(abs(mean), 1e-300))
    w = np.asarray(weights)
    w = w / w.sum()
    for wc, zc in zip(w, signed):
        scores += wc * zc
    index = 1.0 / (1.0 + np.exp(-scores))
    return IndexTable(
        keys=list(table.keys),
        columns=table.columns,
        index=index,
        status=list(table.status) if table.status else ["ok"] * len(table.keys),
    )


def silverman_bandwidth(samples: np.ndarray) -> np.ndarray:
    """Per-dimension rule-of-thumb bandwidth ``0.9 min(std, iqr/1.34) n^(-1/5)``."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = samples.shape[0]
    std = np.std(samples, axis=0, ddof=1)
    q75, q25 = np.percentile(samples, [75, 25], axis=0)
    spread = np.minimum(std, (q75 - q25) / 1.34)
    spread = np.where(spread > 0.0, spread, np.maximum(std, 1e-12))
    return 0.9 * spread * n ** (-0.2)


def estimate_score(
    samples: np.ndarray,
    x: np.ndarray,
    bandwidth: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Gradient of the log of a Gaussian kernel density estimate at ``x``.

    ``bandwidth`` may be a scalar or per-dimension vector; ``None`` picks
    the Silverman rule per dimension.  Needs at least 100 samples.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n, d = samples.shape
    if n < 100:
        raise InvalidInput(f"score estimation needs >= 100 samples, got {n}")
    if bandwidth is None:
        h = silverman_bandwidth(samples)
    else:
        h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (d,)).copy()
        if np.any(h <= 0.0):
            raise InvalidInput("bandwidth must be positive")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    scores = np.empty_like(pts)
    z = (pts[:, None, :] - samples[None, :, :]) / h  # (B, n, d)
    logw = -0.5 * np.sum(z * z, axis=-1)  # (B, n)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    scores = np.einsum("bn,bnd->bd", w, samples[None, :, :] - pts[:, None, :]) / h**2
    return scores[0] if single else scores


def trajectory_divergence(
    spec_p,
    spec_q,
    dataset: np.ndarray,
    g: float,
    t_grid: np.ndarray,
    n: int,
    rng: np.random.Generator,
    prior: Optional[PriorSpec] = None,
    steps: int = 200,
) -> np.ndarray:
    """Indicator of how differently two trajectory families evolve.

    Shared prior draws are flowed backward from the horizon under each
    family's oracle field; at every grid time the score of each ensemble
    is estimated at the coupled sample positions and the indicator
    ``0.5 * g**2 * || mean(score_p - score_q) ||`` is returned per grid
    time.  Identical specs under a shared seed give exactly zero.
    """
    from .field import OracleField

    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    if n < 1000:
        raise InvalidInput("ensemble size must be >= 1000")
    if spec_p.dimension != spec_q.dimension:
        raise InvalidInput("families must share the data dimension")
    horizon = spec_p.horizon
    if spec_q.horizon != horizon:
        raise InvalidInput("families must share the horizon")
    if np.any(t_grid < spec_p.t_min) or np.any(t_grid > horizon):
        raise InvalidInput("t_grid must lie within [t_min, horizon]")
    prior = prior or PriorSpec(sigma=spec_p.terminal_sigma)
    draws = sample_terminal(prior, spec_p.dimension, n, rng, t_ref=horizon)
    t_lo = float(t_grid[0])
    cfg = SolverConfig(
        method=Method.RK4,
        t_start=horizon,
        t_end=t_lo,
        step_size=(horizon - t_lo) / steps if horizon > t_lo else 1.0,
    )
    # grid ordered in the direction of integration (decreasing time)
    capture = t_grid[::-1].copy()

    def ensembles(spec):
        fld = OracleField(dataset, spec)
        if horizon == t_lo:
            return [draws.copy() for _ in capture]
        _, _, snaps = integrate_batch(fld, draws, cfg, grid=capture)
        return snaps

    snaps_p = ensembles(spec_p)
    snaps_q = ensembles(spec_q)
    out = np.empty(len(t_grid))
    for i in range(len(capture)):
        xp, xq = snaps_p[i], snaps_q[i]
        sp = estimate_score(xp, xp)
        sq = estimate_score(xq, xq)
        mean_diff = np.mean(sp - sq, axis=0)
        out[len(t_grid) - 1 - i] = 0.5 * g * g * float(np.linalg.norm(mean_diff))
    return out


def metric_report(
    generated: np.ndarray,
    reference: np.ndarray,
    nfe: int,
    rng: np.random.Generator,
    n_projections: int = 128,
    wall_time: float = 0.0,
) -> MetricReport:
    """Bundle the two sample-quality metrics with the solver cost."""
    sw = sliced_wasserstein(generated, reference, n_projections, rng)
    ed = energy_distance(generated, reference, rng)
    return MetricReport(
        sliced_wasserstein=sw, energy_distance=ed, nfe=int(nfe), wall_time=wall_time
    )


def report_csv(reports: Sequence[MetricReport], labels: Optional[Sequence] = None) -> str:
    """Serialize reports with the fixed metric header, one row each.

    Wall time is kept out of the CSV so outputs stay byte-deterministic
    under fixed seeds; timings belong in logs.
    """
    header = ",".join(MetricReport.CSV_COLUMNS)
    lines = []
    if labels is None:
        lines.append(header)
        lines.extend(r.csv_row() for r in reports)
    else:
        lines.append("label," + header)
        lines.extend(f"{l},{r.csv_row()}" for l, r in zip(labels, reports))
    return "\n".join(lines) + "\n"


def index_csv(table: IndexTable, hashes: Optional[Sequence[str]] = None) -> str:
    """Serialize an index table; the index cells stay empty when absent."""
    names = [c.name for c in table.columns]
    header = "on," + ",".join(names) + ",index,status"
    if hashes is not None:
        header += ",samples_sha256"
    lines = [header]
    for i, key in enumerate(table.keys):
        cells = [str(key)]
        cells += [f"{c.values[i]:.17g}" for c in table.columns]
        cells.append("" if table.index is None else f"{table.index[i]:.17g}")
        cells.append(table.status[i] if table.status else "ok")
        if hashes is not None:
            cells.append(hashes[i])
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
