"""Experiment harness: overlap sweeps and family comparisons.

``run_superposition_study`` trains one superposed-linear model per overlap
count with an identical budget, generates from each, measures sample
quality and solver cost, and aggregates everything into an index table
(the composite index is left absent when it is undefined, e.g. a single
row).  ``compare_families`` trains a list of families side by side and
adds pairwise trajectory-divergence curves.

Output tree, single seed:

    <outdir>/on=<k>/{checkpoint.txt, samples.csv, report.csv}
    <outdir>/index.csv

With several seeds each cell holds ``seed=<s>/`` subdirectories and the
cell-level report carries the per-seed mean.  Every index row records the
sha256 of the sample files backing it.  Outputs are a pure function of
the configuration: rerunning reproduces every byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field as dataclass_field
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data_io import Dataset, write_csv
from .errors import NumericFault
from .field import LearnedField
from .metrics import (
    IndexColumn,
    IndexTable,
    MetricReport,
    composite_index,
    index_csv,
    metric_report,
    report_csv,
    trajectory_divergence,
)
from .ode import Method, SolverConfig, generate
from .rng import stream
from .sampler import PriorSpec
from .trainer import TrainerConfig, save_checkpoint, train
from .trajectory import Family, TrajectorySpec

from .errors import DegenerateInput


@dataclass(frozen=True)
class StudyConfig:
    on_values: Sequence[int]
    dataset: Dataset
    heldout: np.ndarray
    spec: TrajectorySpec          # template; overlap is overridden per cell
    prior: PriorSpec
    trainer: TrainerConfig        # identical budget for every cell
    solver: SolverConfig
    n_generate: int
    seeds: Sequence[int]
    outdir: Path
    n_projections: int = 128
    threads: int = 1

    def __post_init__(self):
        if not self.on_values:
            raise ValueError("on_values must be non-empty")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")


@dataclass
class CellResult:
    key: int
    report: Optional[MetricReport]
    status: str
    sample_hash: str


def _train_generate_measure(cfg: StudyConfig, spec: TrajectorySpec, seed: int, outdir: Path):
    """One (spec, seed) cell: returns (report, samples) and writes artifacts."""
    outdir.mkdir(parents=True, exist_ok=True)
    tcfg = dataclasses.replace(cfg.trainer, seed=seed)
    result = train(cfg.dataset.points, spec, cfg.prior, tcfg)
    save_checkpoint(outdir / "checkpoint.txt", result.net, spec)
    learned = LearnedField(result.net, spec)
    gen = generate(learned, cfg.prior, cfg.n_generate, cfg.solver, stream(seed, "generate"))
    write_csv(outdir / "samples.csv", gen.states)
    report = metric_report(
        gen.states,
        cfg.heldout,
        gen.nfe,
        stream(seed, "metrics"),
        n_projections=cfg.n_projections,
    )
    (outdir / "report.csv").write_text(report_csv([report]), encoding="utf-8")
    return report, gen.states


def _sha256(paths: Sequence[Path]) -> str:
    digest = hashlib.sha256()
    for p in paths:
        digest.update(Path(p).read_bytes())
    return digest.hexdigest()


def _run_cell(cfg: StudyConfig, overlap: int) -> CellResult:
    spec = dataclasses.replace(cfg.spec, family=Family.SUPERPOSED_LINEAR, overlap=overlap)
    cell_dir = cfg.outdir / f"on={overlap}"
    reports = []
    sample_files = []
    try:
        if len(cfg.seeds) == 1:
            report, _ = _train_generate_measure(cfg, spec, cfg.seeds[0], cell_dir)
            reports.append(report)
            sample_files.append(cell_dir / "samples.csv")
        else:
            for seed in cfg.seeds:
                sub = cell_dir / f"seed={seed}"
                report, _ = _train_generate_measure(cfg, spec, seed, sub)
                reports.append(report)
                sample_files.append(sub / "samples.csv")
            mean = MetricReport(
                sliced_wasserstein=float(np.mean([r.sliced_wasserstein for r in reports])),
                energy_distance=float(np.mean([r.energy_distance for r in reports])),
                nfe=int(round(np.mean([r.nfe for r in reports]))),
            )
            cell_dir.mkdir(parents=True, exist_ok=True)
            (cell_dir / "report.csv").write_text(report_csv([mean]), encoding="utf-8")
            reports = [mean] + reports
    except NumericFault:
        return CellResult(key=overlap, report=None, status="failed", sample_hash="")
    return CellResult(
        key=overlap,
        report=reports[0],
        status="ok",
        sample_hash=_sha256(sample_files),
    )


def run_superposition_study(cfg: StudyConfig) -> IndexTable:
    """Sweep the overlap count; emit per-cell artifacts and the index table."""
    cfg.outdir.mkdir(parents=True, exist_ok=True)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            cells = list(pool.map(lambda k: _run_cell(cfg, k), cfg.on_values))
    else:
        cells = [_run_cell(cfg, k) for k in cfg.on_values]
    cells.sort(key=lambda c: c.key)

    ok = [c for c in cells if c.status == "ok"]
    table = IndexTable(
        keys=[c.key for c in ok],
        columns=[
            IndexColumn(
                "sliced_wasserstein",
                higher_is_better=False,
                values=np.array([c.report.sliced_wasserstein for c in ok]),
            ),
            IndexColumn(
                "energy_distance",
                higher_is_better=False,
                values=np.array([c.report.energy_distance for c in ok]),
            ),
            IndexColumn(
                "nfe",
                higher_is_better=False,
                values=np.array([float(c.report.nfe) for c in ok]),
            ),
        ],
        status=[c.status for c in ok],
    )
    try:
        table = composite_index(table)
    except DegenerateInput:
        pass  # reported as absent: the index cells stay empty
    # merge failed rows back, keyed by overlap
    if len(ok) != len(cells):
        merged_keys, merged_status = [], []
        col_map = {c.name: [] for c in table.columns}
        index_vals = []
        ok_pos = {k: i for i, k in enumerate(table.keys)}
        for c in cells:
            merged_keys.append(c.key)
            merged_status.append(c.status)
            for col in table.columns:
                col_map[col.name].append(
                    col.values[ok_pos[c.key]] if c.status == "ok" else np.nan
                )
            if table.index is not None:
                index_vals.append(table.index[ok_pos[c.key]] if c.status == "ok" else np.nan)
        table = IndexTable(
            keys=merged_keys,
            columns=[
                IndexColumn(col.name, col.higher_is_better, np.array(col_map[col.name]))
                for col in table.columns
            ],
            index=np.array(index_vals) if table.index is not None else None,
            status=merged_status,
        )
    hashes = {c.key: c.sample_hash for c in cells}
    text = index_csv(table, hashes=[hashes[k] for k in table.keys])
    (cfg.outdir / "index.csv").write_text(text, encoding="utf-8")
    return table


def compare_families(
    dataset: Dataset,
    heldout: np.ndarray,
    families: Sequence[TrajectorySpec],
    cfg: StudyConfig,
    divergence_g: float = 1.0,
    divergence_grid: Optional[np.ndarray] = None,
    divergence_n: int = 1000,
) -> list:
    """Train each family with an identical budget and report side by side.

    Also writes the pairwise trajectory-divergence curves over a time
    grid.  Returns the list of (label, MetricReport | None, status).
    """
    if len(families) < 2:
        raise ValueError("need at least 2 families to compare")
    cfg.outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    labels = []
    for i, spec in enumerate(families):
        label = f"{spec.family.value}#{i}"
        labels.append(label)
        fam_dir = cfg.outdir / f"family={label.replace('#', '-')}"
        try:
            report, _ = _train_generate_measure(cfg, spec, cfg.seeds[0], fam_dir)
            rows.append((label, report, "ok"))
        except NumericFault:
            rows.append((label, None, "failed"))
    good = [(l, r) for l, r, s in rows if s == "ok"]
    (cfg.outdir / "compare.csv").write_text(
        report_csv([r for _, r in good], labels=[l for l, _ in good]), encoding="utf-8"
    )
    if divergence_grid is None:
        t0 = families[0].t_min * 10.0
        divergence_grid = np.linspace(max(t0, 0.05), families[0].horizon * 0.95, 7)
    lines = ["t," + ",".join(
        f"{labels[i]}|{labels[j]}"
        for i in range(len(families))
        for j in range(i + 1, len(families))
    )]
    curves = []
    for i in range(len(families)):
        for j in range(i + 1, len(families)):
            curves.append(
                trajectory_divergence(
                    families[i],
                    families[j],
                    dataset.points,
                    divergence_g,
                    divergence_grid,
                    divergence_n,
                    stream(cfg.seeds[0], "divergence", i * len(families) + j),
                    prior=cfg.prior,
                )
            )
    for row_i, t in enumerate(divergence_grid):
        cells = [f"{t:.17g}"] + [f"{c[row_i]:.17g}" for c in curves]
        lines.append(",".join(cells))
    (cfg.outdir / "divergence.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows
