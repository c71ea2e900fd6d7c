"""Explicit ODE integration of velocity fields with exact NFE accounting.

Three steppers: forward Euler, classic RK4, and an adaptive embedded 4(5)
pair with a deterministic step controller.  Every call of the field
counts once toward NFE: Euler spends 1 per step, RK4 spends 4, the
adaptive pair spends 6 per *attempted* step, rejected attempts included.

Generation is backward integration from the terminal prior at ``t = T``
down to ``t_min``; the state there is taken as the sample (the fields are
singular at t = 0 and the flow is contractive near the data, so no final
jump step is needed).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import InvalidInput, NonConvergence, NumericFault
from .sampler import PriorSpec, sample_terminal

# Fehlberg 4(5) tableau.  The fifth-order solution is propagated; the
# difference against the embedded fourth-order one estimates local error.
_C = np.array([0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2])
_A = [
    np.array([]),
    np.array([1 / 4]),
    np.array([3 / 32, 9 / 32]),
    np.array([1932 / 2197, -7200 / 2197, 7296 / 2197]),
    np.array([439 / 216, -8.0, 3680 / 513, -845 / 4104]),
    np.array([-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40]),
]
_B5 = np.array([16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55])
_BERR = np.array([1 / 360, 0.0, -128 / 4275, -2197 / 75240, 1 / 50, 2 / 55])

_SAFETY = 0.9
_FACTOR_MIN = 0.2
_FACTOR_MAX = 5.0
_INITIAL_STEPS = 50.0


class Method(str, Enum):
    EULER = "euler"
    RK4 = "rk4"
    RK45 = "rk45"


@dataclass(frozen=True)
class SolverConfig:
    method: Method
    t_start: float
    t_end: float
    step_size: Optional[float] = None
    rtol: Optional[float] = None
    atol: Optional[float] = None
    max_steps: int = 100_000

    def __post_init__(self):
        if self.t_start == self.t_end:
            raise InvalidInput("t_start and t_end must differ")
        if self.max_steps < 1:
            raise InvalidInput("max_steps must be >= 1")
        if self.method in (Method.EULER, Method.RK4):
            if self.step_size is None or self.step_size <= 0.0:
                raise InvalidInput(f"{self.method.value} needs step_size > 0")
        else:
            if self.rtol is None or self.atol is None or self.rtol <= 0 or self.atol <= 0:
                raise InvalidInput("rk45 needs rtol > 0 and atol > 0")

    def reversed(self) -> "SolverConfig":
        return SolverConfig(
            method=self.method,
            t_start=self.t_end,
            t_end=self.t_start,
            step_size=self.step_size,
            rtol=self.rtol,
            atol=self.atol,
            max_steps=self.max_steps,
        )


@dataclass
class TrajectoryRecord:
    """Times, states, and the exact number of field evaluations."""

    times: np.ndarray
    states: np.ndarray
    nfe: int


@dataclass
class GenerationResult:
    states: np.ndarray  # (n, d)
    nfe: int


def _fixed_step_count(cfg: SolverConfig) -> int:
    span = abs(cfg.t_end - cfg.t_start)
    n = int(np.ceil(span / cfg.step_size - 1e-9))
    return max(n, 1)


def _error_norm(err: np.ndarray, y0: np.ndarray, y1: np.ndarray, rtol: float, atol: float) -> float:
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def integrate(field, x_start: np.ndarray, cfg: SolverConfig) -> TrajectoryRecord:
    """Integrate ``dx/dt = field(x, t)`` from ``t_start`` to ``t_end``.

    Raises ``NonConvergence`` (carrying the partial record) when the step
    budget runs out and ``NumericFault`` on non-finite states.
    """
    x = np.asarray(x_start, dtype=float).copy()
    nfe = 0

    def f(state, time):
        nonlocal nfe
        nfe += 1
        out = np.asarray(field(state, time), dtype=float)
        return out

    times = [cfg.t_start]
    states = [x.copy()]
    direction = 1.0 if cfg.t_end > cfg.t_start else -1.0
    span = abs(cfg.t_end - cfg.t_start)

    if cfg.method in (Method.EULER, Method.RK4):
        n = _fixed_step_count(cfg)
        if n > cfg.max_steps:
            raise NonConvergence(
                f"{n} fixed steps exceed max_steps={cfg.max_steps}",
                partial=TrajectoryRecord(np.asarray(times), np.asarray(states), nfe),
            )
        h = (cfg.t_end - cfg.t_start) / n
        t = cfg.t_start
        for _ in range(n):
            if cfg.method is Method.EULER:
                x = x + h * f(x, t)
            else:
                k1 = f(x, t)
                k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
                k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
                k4 = f(x + h * k3, t + h)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
            if not np.all(np.isfinite(x)):
                raise NumericFault("state became non-finite during integration")
            times.append(t)
            states.append(x.copy())
        return TrajectoryRecord(np.asarray(times), np.asarray(states), nfe)

    # adaptive embedded 4(5) pair
    t = cfg.t_start
    h = direction * span / _INITIAL_STEPS
    h_floor = span * 1e-14
    attempts = 0
    while direction * (cfg.t_end - t) > 1e-14 * span:
        if attempts >= cfg.max_steps:
            raise NonConvergence(
                f"adaptive solver exceeded max_steps={cfg.max_steps}",
                partial=TrajectoryRecord(np.asarray(times), np.asarray(states), nfe),
            )
        if direction * (t + h - cfg.t_end) > 0.0:
            h = cfg.t_end - t
        k = np.empty((6,) + x.shape)
        k[0] = f(x, t)
        for i in range(1, 6):
            xi = x + h * (_A[i] @ k[:i])
            k[i] = f(xi, t + _C[i] * h)
        x_new = x + h * (_B5 @ k)
        err = h * (_BERR @ k)
        if not np.all(np.isfinite(x_new)):
            raise NumericFault("state became non-finite during integration")
        enorm = _error_norm(err, x, x_new, cfg.rtol, cfg.atol)
        attempts += 1
        if enorm <= 1.0:
            t = t + h
            x = x_new
            times.append(t)
            states.append(x.copy())
            factor = _FACTOR_MAX if enorm == 0.0 else _SAFETY * enorm ** -0.2
        else:
            factor = _SAFETY * enorm ** -0.2
        h = h * min(max(factor, _FACTOR_MIN), _FACTOR_MAX)
        if abs(h) < h_floor:
            raise NonConvergence(
                "adaptive step collapsed below the floor",
                partial=TrajectoryRecord(np.asarray(times), np.asarray(states), nfe),
            )
    return TrajectoryRecord(np.asarray(times), np.asarray(states), nfe)


def _batch_eval(field, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    batch = getattr(field, "batch", None)
    if batch is not None:
        return np.asarray(batch(x, t), dtype=float)
    return np.stack([np.asarray(field(x[i], t[i]), dtype=float) for i in range(x.shape[0])])


def integrate_batch(
    field, x_start: np.ndarray, cfg: SolverConfig, grid: Optional[np.ndarray] = None
):
    """Integrate many states at once; each row follows its own controller.

    Per-row step controllers are independent, so every sample reproduces
    the trajectory it would get from a solo ``integrate`` call; batching
    only amortizes the field evaluations.  Returns ``(final_states,
    total_nfe, snapshots)`` where ``snapshots[i]`` is the (B, d) state
    array at ``grid[i]`` (grid times must lie inside the integration
    interval and be ordered in the direction of integration).
    """
    x = np.atleast_2d(np.asarray(x_start, dtype=float)).copy()
    B, d = x.shape
    direction = 1.0 if cfg.t_end > cfg.t_start else -1.0
    span = abs(cfg.t_end - cfg.t_start)
    grid = None if grid is None else np.asarray(grid, dtype=float)
    snapshots = [] if grid is None else [np.empty_like(x) for _ in grid]
    grid_next = np.zeros(B, dtype=int)

    def take_snapshots(t_old, t_new, x_old, x_new, rows):
        # record grid crossings with linear interpolation inside the step
        if grid is None:
            return
        for ridx, row in enumerate(rows):
            while grid_next[row] < len(grid):
                g = grid[grid_next[row]]
                passed = direction * (t_new[ridx] - g) >= -1e-12 * span
                started = direction * (g - t_old[ridx]) >= -1e-12 * span
                if not (passed and started):
                    break
                w = 0.0 if t_new[ridx] == t_old[ridx] else (g - t_old[ridx]) / (
                    t_new[ridx] - t_old[ridx]
                )
                snapshots[grid_next[row]][row] = x_old[ridx] + w * (x_new[ridx] - x_old[ridx])
                grid_next[row] += 1

    nfe = 0
    if cfg.method in (Method.EULER, Method.RK4):
        n = _fixed_step_count(cfg)
        if n > cfg.max_steps:
            raise NonConvergence(f"{n} fixed steps exceed max_steps={cfg.max_steps}")
        h = (cfg.t_end - cfg.t_start) / n
        t = np.full(B, cfg.t_start)
        rows = np.arange(B)
        for _ in range(n):
            x_old = x.copy()
            t_old = t.copy()
            if cfg.method is Method.EULER:
                x = x + h * _batch_eval(field, x, t)
                nfe += B
            else:
                k1 = _batch_eval(field, x, t)
                k2 = _batch_eval(field, x + 0.5 * h * k1, t + 0.5 * h)
                k3 = _batch_eval(field, x + 0.5 * h * k2, t + 0.5 * h)
                k4 = _batch_eval(field, x + h * k3, t + h)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                nfe += 4 * B
            t = t + h
            if not np.all(np.isfinite(x)):
                raise NumericFault("state became non-finite during integration")
            take_snapshots(t_old, t, x_old, x, rows)
        return x, nfe, snapshots

    t = np.full(B, cfg.t_start)
    h = np.full(B, direction * span / _INITIAL_STEPS)
    h_floor = span * 1e-14
    attempts = np.zeros(B, dtype=int)
    active = np.ones(B, dtype=bool)
    while active.any():
        rows = np.nonzero(active)[0]
        if np.any(attempts[rows] >= cfg.max_steps):
            raise NonConvergence(f"adaptive solver exceeded max_steps={cfg.max_steps}")
        hb = h[rows]
        overshoot = direction * (t[rows] + hb - cfg.t_end) > 0.0
        hb = np.where(overshoot, cfg.t_end - t[rows], hb)
        xb = x[rows]
        tb = t[rows]
        k = np.empty((6, len(rows), d))
        k[0] = _batch_eval(field, xb, tb)
        for i in range(1, 6):
            xi = xb + hb[:, None] * np.einsum("s,sbd->bd", _A[i], k[:i])
            k[i] = _batch_eval(field, xi, tb + _C[i] * hb)
        nfe += 6 * len(rows)
        x_new = xb + hb[:, None] * np.einsum("s,sbd->bd", _B5, k)
        err = hb[:, None] * np.einsum("s,sbd->bd", _BERR, k)
        if not np.all(np.isfinite(x_new)):
            raise NumericFault("state became non-finite during integration")
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(xb), np.abs(x_new))
        enorm = np.sqrt(np.mean((err / scale) ** 2, axis=1))
        attempts[rows] += 1
        accept = enorm <= 1.0
        acc_rows = rows[accept]
        if len(acc_rows):
            t_old = t[acc_rows].copy()
            x_old = x[acc_rows].copy()
            t[acc_rows] = tb[accept] + hb[accept]
            x[acc_rows] = x_new[accept]
            take_snapshots(t_old, t[acc_rows], x_old, x[acc_rows], acc_rows)
        with np.errstate(divide="ignore"):
            factor = np.where(
                enorm == 0.0, _FACTOR_MAX, _SAFETY * enorm ** -0.2
            )
        h[rows] = hb * np.clip(factor, _FACTOR_MIN, _FACTOR_MAX)
        if np.any(np.abs(h[rows]) < h_floor):
            raise NonConvergence("adaptive step collapsed below the floor")
        done = direction * (cfg.t_end - t[rows]) <= 1e-14 * span
        active[rows[done]] = False
    return x, nfe, snapshots


def roundtrip_error(field, x0_batch: np.ndarray, cfg: SolverConfig) -> float:
    """Mean reconstruction error of integrating forward then backward."""
    x0_batch = np.atleast_2d(np.asarray(x0_batch, dtype=float))
    fwd, _, _ = integrate_batch(field, x0_batch, cfg)
    back, _, _ = integrate_batch(field, fwd, cfg.reversed())
    return float(np.mean(np.linalg.norm(back - x0_batch, axis=1)))


def generate(
    field,
    prior: PriorSpec,
    n: int,
    cfg: SolverConfig,
    rng: np.random.Generator,
) -> GenerationResult:
    """Draw ``n`` terminal states from the prior and flow them backward.

    ``cfg`` must integrate from the horizon down to the time floor.  The
    per-sample integrations are independent; NFE is their exact total.
    """
    if cfg.t_end >= cfg.t_start:
        raise InvalidInput("generation integrates backward: t_end < t_start")
    d = getattr(field, "dimension", None)
    if d is None:
        raise InvalidInput("field must expose its dimension for generation")
    if n == 0:
        return GenerationResult(states=np.zeros((0, d)), nfe=0)
    start = sample_terminal(prior, d, n, rng, t_ref=cfg.t_start)
    states, nfe, _ = integrate_batch(field, start, cfg)
    return GenerationResult(states=states, nfe=nfe)
