"""Aggregate velocity fields over a dataset.

The oracle field is the exact posterior-weighted mean of per-source
conditional velocities,

    F(x, t) = sum_i w_i * V_i(x, t),   w_i ~ kernel_i(x, t),

with weights normalized in log space (max-subtraction) because kernels
with Gaussian tails or inverse-power exponents underflow quickly.  It is
the ground-truth reference a trained network must match.

``LearnedField`` adapts a trained network to the same calling convention,
undoing the trainer's time-scaled target parameterization (the network
regresses ``t * F``, so the field divides by ``t``).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Optional

import numpy as np

from .errors import InvalidInput, NumericFault, SingularityGuard
from .trajectory import (
    TrajectorySpec,
    log_kernel_grid,
    posterior_velocity_grid,
)

_CHUNK = 512


@dataclass
class OracleField:
    """Exact aggregate field over a finite dataset.

    Evaluation is pure; ``fallback_events`` only counts the far-field
    rescues where every kernel underflowed to zero and the weights fell
    back to uniform (adaptive solvers probe such states transiently).
    """

    dataset: np.ndarray
    spec: TrajectorySpec
    fallback_events: int = dataclass_field(default=0, compare=False)

    def __post_init__(self):
        self.dataset = np.atleast_2d(np.asarray(self.dataset, dtype=float))
        if self.dataset.size == 0:
            raise InvalidInput("oracle dataset must be non-empty")
        if self.dataset.shape[1] != self.spec.dimension:
            raise InvalidInput(
                f"dataset dimension {self.dataset.shape[1]} does not match "
                f"spec dimension {self.spec.dimension}"
            )

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    def log_weights(self, x: np.ndarray, t: float) -> np.ndarray:
        """Normalized posterior log-weights of each dataset point at (x, t)."""
        logk = log_kernel_grid(self.spec, self.dataset, np.asarray(x)[None, :], np.asarray([t]))[0]
        return self._normalize_rows(logk[None, :])[0]

    def _normalize_rows(self, logk: np.ndarray) -> np.ndarray:
        """Row-wise log-softmax with a uniform fallback for dead rows."""
        out = np.empty_like(logk)
        finite = np.isfinite(logk)
        dead = ~finite.any(axis=1)
        if dead.any():
            self.fallback_events += int(dead.sum())
            out[dead] = -np.log(logk.shape[1])
        alive = ~dead
        if alive.any():
            rows = np.where(finite[alive], logk[alive], -np.inf)
            peak = rows.max(axis=1, keepdims=True)
            shifted = rows - peak
            norm = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
            out[alive] = shifted - norm
        return out

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise InvalidInput(f"state must have shape ({self.dimension},)")
        return self.batch(x[None, :], np.asarray([t], dtype=float))[0]

    def batch(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Field values for states ``x`` (B, d) at per-row times ``t`` (B,)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.asarray(t, dtype=float)
        out = np.empty_like(x)
        for lo in range(0, x.shape[0], _CHUNK):
            hi = min(lo + _CHUNK, x.shape[0])
            logk = log_kernel_grid(self.spec, self.dataset, x[lo:hi], t[lo:hi])
            w = np.exp(self._normalize_rows(logk))  # (b, n)
            vel = posterior_velocity_grid(self.spec, self.dataset, x[lo:hi], t[lo:hi])
            out[lo:hi] = np.einsum("bn,bnd->bd", w, vel)
        return out

    def extended_vector(self, t: float, x: np.ndarray) -> np.ndarray:
        """Space-time flux vector ``(v1, v1 * F)`` at ``(t, x)``.

        ``v1`` is the mean kernel over sources and ``v1 * F`` the mean of
        kernel-weighted conditional velocities; the pair is divergence-free
        in (t, x) away from the sources.
        """
        x = np.asarray(x, dtype=float)
        logk = log_kernel_grid(self.spec, self.dataset, x[None, :], np.asarray([t]))[0]
        k = np.exp(logk)
        vel = posterior_velocity_grid(self.spec, self.dataset, x[None, :], np.asarray([t]))[0]
        v1 = float(np.mean(k))
        flux = np.mean(k[:, None] * vel, axis=0)
        return np.concatenate([[v1], flux])


def oracle_field(dataset, spec: TrajectorySpec, x_t, t: float) -> np.ndarray:
    """One-shot oracle evaluation; see ``OracleField`` for the batched form."""
    return OracleField(dataset, spec)(np.asarray(x_t, dtype=float), t)


@dataclass
class LearnedField:
    """Trained-network field with the trainer's time scaling undone."""

    net: "FieldNet"  # noqa: F821 - duck-typed, anything with forward(x, t)
    spec: TrajectorySpec

    def __post_init__(self):
        widths = getattr(self.net, "widths", None)
        if widths is not None:
            d = self.spec.dimension
            if widths[0] != d + 2 or widths[-1] != d:
                raise InvalidInput(
                    f"network widths {widths} do not match dimension {d}"
                )

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise InvalidInput(f"state must have shape ({self.dimension},)")
        return self.batch(x[None, :], np.asarray([t], dtype=float))[0]

    def batch(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.asarray(t, dtype=float)
        if np.any(t < self.spec.t_min - 1e-12):
            raise SingularityGuard(f"t below the t_min={self.spec.t_min} guard")
        out = self.net.forward(x, t) / t[:, None]
        if not np.all(np.isfinite(out)):
            raise NumericFault("network produced non-finite field values")
        return out


def learned_field(net, spec: TrajectorySpec, x_t, t: float) -> np.ndarray:
    """One-shot learned-field evaluation."""
    return LearnedField(net, spec)(np.asarray(x_t, dtype=float), t)


def divergence_residual(field, point: tuple, h: float) -> float:
    """Central finite-difference space-time divergence of the flux vector.

    ``field`` must expose ``extended_vector(t, x)``; for the oracle the
    evaluation point has to keep a distance of more than ``10 h`` from
    every dataset source in the extended metric, since the kernels are
    singular there.
    """
    if h <= 0.0:
        raise InvalidInput("step h must be positive")
    t0, x0 = point
    x0 = np.asarray(x0, dtype=float)
    dataset = getattr(field, "dataset", None)
    if dataset is not None:
        r = np.sqrt(t0 * t0 + np.sum((np.atleast_2d(dataset) - x0) ** 2, axis=1))
        if np.min(r) <= 10.0 * h:
            raise InvalidInput(
                f"evaluation point within the 10h={10 * h} guard radius of a source"
            )
    d = x0.shape[0]
    div = 0.0
    # time component
    vp = field.extended_vector(t0 + h, x0)
    vm = field.extended_vector(t0 - h, x0)
    div += (vp[0] - vm[0]) / (2.0 * h)
    # spatial components
    for j in range(d):
        step = np.zeros(d)
        step[j] = h
        vp = field.extended_vector(t0, x0 + step)
        vm = field.extended_vector(t0, x0 - step)
        div += (vp[1 + j] - vm[1 + j]) / (2.0 * h)
    return abs(float(div))
