"""Command-line interface: train / sample / verify / study / compare.

Configuration is a flat ``key = value`` file (``#`` comments allowed)
plus ``--key value`` overrides applied after the file; every key maps
1:1 to a documented module parameter and unknown keys are rejected by
name.  The fully resolved configuration is echoed to
``<outdir>/resolved.cfg`` so any run can be replayed from its output
directory alone.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime
failure (including a failed verification check).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data_io import BUILTIN_NAMES, builtin, read_csv, split_holdout, emit_svg_scatter
from .errors import ConfigError, ForceFieldError, InvalidInput
from .field import LearnedField
from .metrics import metric_report, report_csv
from .ode import Method, SolverConfig, generate
from .rng import stream
from .sampler import PriorKind, PriorSpec
from .study import StudyConfig, compare_families, run_superposition_study
from .trainer import (
    CHECKPOINT_FORMAT_VERSION,
    TrainerConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .trajectory import Family, TrajectorySpec
from .verify import VerifyTolerances, records_csv, run_all

_FAMILY_CHOICES = tuple(f.value for f in Family)
_PRIOR_CHOICES = tuple(p.value for p in PriorKind)
_SOLVER_CHOICES = tuple(m.value for m in Method)


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


# name -> (python type, default, validator or None, help)
KEY_TABLE = {
    "family": (str, "linear", lambda v: v in _FAMILY_CHOICES, f"one of {_FAMILY_CHOICES}"),
    "dimension": (int, 2, _positive, "data dimension"),
    "horizon": (float, 1.0, _positive, "terminal time T"),
    "t_min": (float, 1e-3, _positive, "velocity/kernel time floor"),
    "curve_m": (float, 2.0, lambda v: v >= 1.0, "curve exponent (curve family)"),
    "overlap": (int, 1, _positive, "overlap count (superposed family)"),
    "sigma_min": (float, 0.01, _positive, "bridge scale at t=0"),
    "sigma_max": (float, 1.0, _positive, "bridge scale at t=T"),
    "poisson_a": (float, 1.0, _positive, "isotropic kernel amplitude"),
    "terminal_sigma": (float, 1.0, _positive, "Gaussian terminal density scale"),
    "prior": (str, "standard_gaussian", lambda v: v in _PRIOR_CHOICES, f"one of {_PRIOR_CHOICES}"),
    "prior_sigma": (float, 1.0, _positive, "prior Gaussian scale"),
    "prior_tau": (float, 0.05, _nonneg, "radial amplification rate"),
    "prior_m_max": (float, 100.0, _nonneg, "radial amplification exponent bound"),
    "prior_radius": (float, 1.0, _positive, "uniform ball radius"),
    "solver": (str, "rk45", lambda v: v in _SOLVER_CHOICES, f"one of {_SOLVER_CHOICES}"),
    "step_size": (float, 1e-2, _positive, "fixed step size (euler/rk4)"),
    "rtol": (float, 1e-5, _positive, "adaptive relative tolerance"),
    "atol": (float, 1e-5, _positive, "adaptive absolute tolerance"),
    "max_steps": (int, 100_000, _positive, "solver step budget"),
    "steps": (int, 4000, _positive, "training steps"),
    "batch_size": (int, 32, _positive, "training batch size"),
    "lr": (float, 1e-4, _positive, "initial learning rate"),
    "lr_decay": (float, 0.8, lambda v: 0.0 < v <= 1.0, "learning-rate decay factor"),
    "lr_decay_epochs": (int, 3, _positive, "epochs between decays"),
    "val_fraction": (float, 0.1, lambda v: 0.0 <= v < 1.0, "validation split"),
    "val_every": (int, 1000, _positive, "steps between validations"),
    "hidden": (int, 128, _positive, "hidden layer width"),
    "depth": (int, 3, _positive, "hidden layer count"),
    "jitter": (float, 0.0, _nonneg, "Gaussian data jitter scale"),
    "dataset": (str, "ring8", None, "builtin name or path to a points CSV"),
    "dataset_size": (int, 10_000, _positive, "builtin dataset size"),
    "holdout_fraction": (float, 0.1, lambda v: 0.0 < v < 1.0, "held-out fraction"),
    "n_samples": (int, 1000, _nonneg, "generation count"),
    "n_projections": (int, 128, _positive, "sliced-distance projections"),
    "on_min": (int, 1, _positive, "smallest overlap in the study"),
    "on_max": (int, 8, _positive, "largest overlap in the study"),
    "study_seeds": (str, "", None, "comma-separated seeds (default: --seed)"),
    "families": (str, "linear,curve", None, "families for compare"),
    "indicator_g": (float, 1.0, _positive, "divergence indicator prefactor"),
    "divergence_n": (int, 1000, lambda v: v >= 1000, "divergence ensemble size"),
    "threads": (int, 1, _positive, "study parallelism cap"),
    "norm_rtol": (float, 0.005, _positive, "normalization tolerance"),
    "divfree_tol": (float, 1e-3, _positive, "divergence-free tolerance"),
    "continuity_tol": (float, 1e-4, _positive, "continuity tolerance"),
    "radial_ks": (float, 0.01, _positive, "radial-law KS tolerance"),
    "verify_budget": (int, 2_000_000, _positive, "normalization MC budget"),
}

_SUBCOMMANDS = ("train", "sample", "verify", "study", "compare")


class RunConfig:
    """Resolved configuration with builders for the module objects."""

    def __init__(self, values: dict, seed: int, outdir: Path, checkpoint=None):
        self.values = values
        self.seed = seed
        self.outdir = Path(outdir)
        self.checkpoint = checkpoint

    def __getitem__(self, key):
        return self.values[key]

    def trajectory_spec(self, family=None, overlap=None) -> TrajectorySpec:
        v = self.values
        return TrajectorySpec(
            family=Family(family or v["family"]),
            dimension=v["dimension"],
            horizon=v["horizon"],
            t_min=v["t_min"],
            curve_m=v["curve_m"],
            overlap=overlap if overlap is not None else v["overlap"],
            sigma_min=v["sigma_min"],
            sigma_max=v["sigma_max"],
            poisson_a=v["poisson_a"],
            terminal_sigma=v["terminal_sigma"],
        )

    def prior_spec(self) -> PriorSpec:
        v = self.values
        return PriorSpec(
            kind=PriorKind(v["prior"]),
            sigma=v["prior_sigma"],
            tau=v["prior_tau"],
            m_max=v["prior_m_max"],
            horizon=v["horizon"],
            radius=v["prior_radius"],
        )

    def trainer_config(self, seed=None) -> TrainerConfig:
        v = self.values
        return TrainerConfig(
            steps=v["steps"],
            batch_size=v["batch_size"],
            lr=v["lr"],
            lr_decay=v["lr_decay"],
            lr_decay_epochs=v["lr_decay_epochs"],
            val_fraction=v["val_fraction"],
            val_every=v["val_every"],
            hidden=v["hidden"],
            depth=v["depth"],
            jitter=v["jitter"],
            seed=self.seed if seed is None else seed,
        )

    def solver_config(self, backward=True) -> SolverConfig:
        v = self.values
        t0, t1 = (v["horizon"], v["t_min"]) if backward else (v["t_min"], v["horizon"])
        return SolverConfig(
            method=Method(v["solver"]),
            t_start=t0,
            t_end=t1,
            step_size=v["step_size"],
            rtol=v["rtol"],
            atol=v["atol"],
            max_steps=v["max_steps"],
        )

    def tolerances(self) -> VerifyTolerances:
        v = self.values
        return VerifyTolerances(
            norm_rtol=v["norm_rtol"],
            divfree_tol=v["divfree_tol"],
            continuity_tol=v["continuity_tol"],
            radial_ks=v["radial_ks"],
        )

    def load_dataset(self):
        name = self.values["dataset"]
        if name.endswith(".csv"):
            ds = read_csv(name)
        else:
            ds = builtin(name, self.values["dataset_size"], stream(self.seed, "dataset"))
        return split_holdout(ds, self.values["holdout_fraction"], stream(self.seed, "holdout"))

    def study_seeds(self) -> list:
        raw = self.values["study_seeds"].strip()
        if not raw:
            return [self.seed]
        return [int(s) for s in raw.split(",")]

    def echo(self, path: Path):
        lines = [f"seed = {self.seed}"]
        for key in sorted(self.values):
            lines.append(f"{key} = {self.values[key]}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_value(key: str, raw: str):
    typ, _default, check, hint = KEY_TABLE[key]
    try:
        value = typ(raw)
    except ValueError:
        raise ConfigError([f"{key}: expected {typ.__name__}, got {raw!r}"]) from None
    if check is not None and not check(value):
        raise ConfigError([f"{key}: value {value!r} out of range ({hint})"])
    return value


def parse_config(path, overrides, seed: int, outdir, checkpoint=None) -> RunConfig:
    """Resolve defaults <- config file <- overrides; aggregate every problem."""
    problems = []
    values = {k: spec[1] for k, spec in KEY_TABLE.items()}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                problems.append(f"config line {lineno}: expected 'key = value'")
                continue
            key, _, rhs = line.partition("=")
            key, rhs = key.strip(), rhs.strip()
            if key not in KEY_TABLE:
                problems.append(f"config line {lineno}: unknown key {key!r}")
                continue
            try:
                values[key] = _parse_value(key, rhs)
            except ConfigError as err:
                problems.extend(err.problems)
    for key, raw in overrides:
        if key not in KEY_TABLE:
            problems.append(f"override: unknown key {key!r}")
            continue
        try:
            values[key] = _parse_value(key, raw)
        except ConfigError as err:
            problems.extend(err.problems)
    dataset = values["dataset"]
    if dataset.endswith(".csv") and not Path(dataset).exists():
        problems.append(f"dataset: file {dataset!r} does not exist")
    if checkpoint is not None and not Path(checkpoint).exists():
        problems.append(f"checkpoint: file {str(checkpoint)!r} does not exist")
    if values["t_min"] >= values["horizon"]:
        problems.append("t_min: must be smaller than horizon")
    if values["on_min"] > values["on_max"]:
        problems.append("on_min: must not exceed on_max")
    if problems:
        raise ConfigError(problems)
    return RunConfig(values, seed=seed, outdir=Path(outdir), checkpoint=checkpoint)


def _cmd_train(cfg: RunConfig) -> int:
    ds = cfg.load_dataset()
    spec = cfg.trajectory_spec()
    result = train(ds.points, spec, cfg.prior_spec(), cfg.trainer_config())
    save_checkpoint(cfg.outdir / "checkpoint.txt", result.net, spec)
    lines = ["step,epoch,lr,loss"]
    log = result.log
    for s, e, lr, loss in zip(log.steps, log.epochs, log.lrs, log.losses):
        lines.append(f"{s},{e},{lr:.17g},{loss:.17g}")
    (cfg.outdir / "train_log.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    vlines = ["step,val_loss"]
    for s, v in zip(log.val_steps, log.val_losses):
        vlines.append(f"{s},{v:.17g}")
    (cfg.outdir / "val_log.csv").write_text("\n".join(vlines) + "\n", encoding="utf-8")
    print(
        f"train: {cfg['steps']} steps, best val {result.best_val_loss:.6g} "
        f"at step {result.best_step}; checkpoint written"
    )
    return 0


def _cmd_sample(cfg: RunConfig) -> int:
    net, spec = load_checkpoint(cfg.checkpoint)
    learned = LearnedField(net, spec)
    solver = dataclasses.replace(
        cfg.solver_config(backward=True), t_start=spec.horizon, t_end=spec.t_min
    )
    out = generate(learned, cfg.prior_spec(), cfg["n_samples"], solver, stream(cfg.seed, "generate"))
    from .data_io import write_csv

    write_csv(cfg.outdir / "samples.csv", out.states)
    emit_svg_scatter(out.states, cfg.outdir / "samples.svg")
    if cfg["dataset"].endswith(".csv") or cfg["dataset"] in BUILTIN_NAMES:
        ds = cfg.load_dataset()
        report = metric_report(
            out.states,
            ds.holdout,
            out.nfe,
            stream(cfg.seed, "metrics"),
            n_projections=cfg["n_projections"],
        )
        (cfg.outdir / "report.csv").write_text(report_csv([report]), encoding="utf-8")
    else:
        (cfg.outdir / "report.csv").write_text(f"nfe\n{out.nfe}\n", encoding="utf-8")
    print(f"sample: {cfg['n_samples']} states, nfe {out.nfe}")
    return 0


def _cmd_verify(cfg: RunConfig) -> int:
    records = run_all(
        cfg.seed,
        lambda purpose, index=0: stream(cfg.seed, purpose, index),
        tol=cfg.tolerances(),
        norm_budget=cfg["verify_budget"],
    )
    (cfg.outdir / "verify.csv").write_text(records_csv(records), encoding="utf-8")
    for r in records:
        print(f"verify: {r.name:32s} estimate={r.estimate:.6g} pass={r.passed}")
    return 0 if all(r.passed for r in records) else 2


def _cmd_study(cfg: RunConfig) -> int:
    ds = cfg.load_dataset()
    study = StudyConfig(
        on_values=list(range(cfg["on_min"], cfg["on_max"] + 1)),
        dataset=ds,
        heldout=ds.holdout,
        spec=cfg.trajectory_spec(family="superposed_linear"),
        prior=cfg.prior_spec(),
        trainer=cfg.trainer_config(),
        solver=cfg.solver_config(backward=True),
        n_generate=cfg["n_samples"],
        seeds=cfg.study_seeds(),
        outdir=cfg.outdir,
        n_projections=cfg["n_projections"],
        threads=cfg["threads"],
    )
    table = run_superposition_study(study)
    print(f"study: {len(table.keys)} overlap cells written to {cfg.outdir}")
    return 0


def _cmd_compare(cfg: RunConfig) -> int:
    ds = cfg.load_dataset()
    family_names = [f.strip() for f in cfg["families"].split(",") if f.strip()]
    if len(family_names) < 2:
        raise InvalidInput("compare needs at least two families")
    specs = [cfg.trajectory_spec(family=name) for name in family_names]
    study = StudyConfig(
        on_values=[1],
        dataset=ds,
        heldout=ds.holdout,
        spec=specs[0],
        prior=cfg.prior_spec(),
        trainer=cfg.trainer_config(),
        solver=cfg.solver_config(backward=True),
        n_generate=cfg["n_samples"],
        seeds=cfg.study_seeds(),
        outdir=cfg.outdir,
        n_projections=cfg["n_projections"],
        threads=cfg["threads"],
    )
    rows = compare_families(
        ds,
        ds.holdout,
        specs,
        study,
        divergence_g=cfg["indicator_g"],
        divergence_n=cfg["divergence_n"],
    )
    for label, report, status in rows:
        extra = "" if report is None else f" sw={report.sliced_wasserstein:.4g} nfe={report.nfe}"
        print(f"compare: {label} {status}{extra}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forcefield",
        description="Force-field construction for ODE-style generative models.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"forcefield {__version__} (checkpoint format {CHECKPOINT_FORMAT_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name, help=f"{name} subcommand")
        p.add_argument("--config", default=None, help="key = value configuration file")
        p.add_argument("--outdir", required=True, help="output directory")
        p.add_argument("--seed", type=int, required=True, help="base random seed")
        if name == "sample":
            p.add_argument("--checkpoint", required=True, help="checkpoint file to sample from")
            p.add_argument("--n", type=int, default=None, help="alias for --n_samples")
    return parser


def _split_overrides(rest: list) -> list:
    pairs = []
    i = 0
    while i < len(rest):
        token = rest[i]
        if not token.startswith("--") or i + 1 >= len(rest):
            raise ConfigError([f"override: expected '--key value', got {token!r}"])
        pairs.append((token[2:], rest[i + 1]))
        i += 2
    return pairs


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _build_parser()
    args, rest = parser.parse_known_args(argv)
    handlers = {
        "train": _cmd_train,
        "sample": _cmd_sample,
        "verify": _cmd_verify,
        "study": _cmd_study,
        "compare": _cmd_compare,
    }
    try:
        overrides = _split_overrides(rest)
        if getattr(args, "n", None) is not None:
            overrides.append(("n_samples", str(args.n)))
        cfg = parse_config(
            args.config,
            overrides,
            seed=args.seed,
            outdir=args.outdir,
            checkpoint=getattr(args, "checkpoint", None),
        )
    except (ConfigError, InvalidInput, OSError) as err:
        print(f"{args.command}: configuration error: {err}", file=sys.stderr)
        return 1
    cfg.outdir.mkdir(parents=True, exist_ok=True)
    try:
        code = handlers[args.command](cfg)
        cfg.echo(cfg.outdir / "resolved.cfg")
        return code
    except ConfigError as err:
        print(f"{args.command}: configuration error: {err}", file=sys.stderr)
        return 1
    except ForceFieldError as err:
        print(f"{args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
