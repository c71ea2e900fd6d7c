"""Closed-form conditional trajectories, their velocities, and kernels.

A trajectory family describes how a data point ``x0`` at time 0 travels to
a terminal sample at time ``T``.  Each family exposes three views of the
same object:

* ``position(spec, anchors, t)``              the path itself,
* ``velocity(spec, anchors, t)``              its time derivative (the
  regression target during training),
* ``conditional_kernel(spec, x0, x_t, t)``    the density of ``x_t`` given
  ``x0``, used as the posterior weight when averaging per-source
  velocities into an aggregate field.

Families
--------
``linear``              straight segment from ``x0`` to the endpoint.
``curve``               monomial bend ``x0 + (e - x0) * (t/T)**m``.
``gaussian_bridge``     ``mu(t, x0) + sigma(t) * e`` with injectable
                        schedules; the default keeps ``mu = x0`` and grows
                        ``sigma`` linearly.
``superposed_linear``   polynomial through ``overlap`` i.i.d. terminal
                        draws, ``x0 + sum_i c_i (t/T)**i`` with
                        ``c_i = e_i - e_{i-1}``.
``poisson``             straight rays like ``linear``, but weighted by the
                        isotropic inverse-power kernel instead of a
                        terminal-density pullback.

All functions are pure and operate on float64 numpy arrays.  Velocities
and kernels are guarded below ``spec.t_min`` where the 1/t factor blows
up; positions are defined on the whole of ``[0, T]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidInput, SingularityGuard

_LOG_2PI = math.log(2.0 * math.pi)
_T_SLACK = 1e-12


class Family(str, Enum):
    POISSON = "poisson"
    LINEAR = "linear"
    GAUSSIAN_BRIDGE = "gaussian_bridge"
    CURVE = "curve"
    SUPERPOSED_LINEAR = "superposed_linear"


@dataclass(frozen=True)
class BridgeSchedules:
    """Mean/scale schedules of the Gaussian bridge and their derivatives.

    All four callables must broadcast over numpy arrays: ``mu(t, x0)`` and
    ``mu_dt(t, x0)`` with ``t`` scalar or broadcastable against ``x0``,
    ``sigma(t)`` / ``sigma_dt(t)`` elementwise in ``t``.
    """

    mu: Callable
    mu_dt: Callable
    sigma: Callable
    sigma_dt: Callable


def default_bridge(horizon: float, sigma_min: float, sigma_max: float) -> BridgeSchedules:
    """Constant mean at ``x0``, scale growing linearly to ``sigma_max``."""
    rate = (sigma_max - sigma_min) / horizon
    return BridgeSchedules(
        mu=lambda t, x0: x0 + 0.0 * t,
        mu_dt=lambda t, x0: 0.0 * x0 + 0.0 * t,
        sigma=lambda t: sigma_min + rate * t,
        sigma_dt=lambda t: rate + 0.0 * t,
    )


@dataclass(frozen=True)
class TrajectorySpec:
    """Which conditional family to use, plus its parameters.

    ``terminal_sigma`` is the scale of the (Gaussian) terminal density the
    kernels pull back through; ``terminal_log_density`` overrides it with
    an arbitrary log-density callable ``f(z) -> (...,)`` for ``z`` of shape
    ``(..., d)``.  The superposed family needs the Gaussian closed form and
    rejects an override.
    """

    family: Family
    dimension: int
    horizon: float = 1.0
    t_min: float = 1e-3
    curve_m: float = 2.0
    overlap: int = 1
    sigma_min: float = 0.01
    sigma_max: float = 1.0
    bridge: Optional[BridgeSchedules] = None
    poisson_a: float = 1.0
    terminal_sigma: float = 1.0
    terminal_log_density: Optional[Callable] = None

    def __post_init__(self):
        if self.dimension < 1:
            raise InvalidInput(f"dimension must be >= 1, got {self.dimension}")
        if not 0.0 < self.t_min < self.horizon:
            raise InvalidInput(
                f"need 0 < t_min < horizon, got t_min={self.t_min}, horizon={self.horizon}"
            )
        if self.curve_m < 1.0:
            raise InvalidInput(f"curve exponent must be >= 1, got {self.curve_m}")
        if self.overlap < 1:
            raise InvalidInput(f"overlap count must be >= 1, got {self.overlap}")
        if self.terminal_sigma <= 0.0:
            raise InvalidInput("terminal_sigma must be positive")
        if self.family is Family.GAUSSIAN_BRIDGE:
            sig = self.bridge_schedules().sigma
            grid = np.linspace(self.t_min, self.horizon, 33)
            vals = np.asarray([float(sig(t)) for t in grid])
            if not np.all(np.diff(vals) > 0.0):
                raise InvalidInput("bridge sigma(t) must be strictly increasing on [t_min, T]")

    @property
    def endpoints_required(self) -> int:
        return self.overlap if self.family is Family.SUPERPOSED_LINEAR else 1

    def bridge_schedules(self) -> BridgeSchedules:
        if self.bridge is not None:
            return self.bridge
        return default_bridge(self.horizon, self.sigma_min, self.sigma_max)

    def terminal_logpdf(self, z: np.ndarray) -> np.ndarray:
        """Log terminal density evaluated at points ``z`` of shape (..., d)."""
        if self.terminal_log_density is not None:
            return np.asarray(self.terminal_log_density(z), dtype=float)
        return _gaussian_logpdf(z, self.terminal_sigma)


@dataclass(frozen=True)
class AnchorSet:
    """One data point plus the endpoint draw(s) tying down a trajectory."""

    x0: np.ndarray
    endpoints: np.ndarray  # (k, d)

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        eps = np.asarray(self.endpoints, dtype=float)
        if eps.ndim == 1:
            eps = eps[None, :]
        object.__setattr__(self, "endpoints", eps)


def _gaussian_logpdf(z: np.ndarray, sigma: float) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    d = z.shape[-1]
    return -0.5 * np.sum(z * z, axis=-1) / sigma**2 - d * (math.log(sigma) + 0.5 * _LOG_2PI)


def _check_anchors(spec: TrajectorySpec, anchors: AnchorSet):
    if anchors.x0.shape != (spec.dimension,):
        raise InvalidInput(
            f"x0 has shape {anchors.x0.shape}, expected ({spec.dimension},)"
        )
    want = (spec.endpoints_required, spec.dimension)
    if anchors.endpoints.shape != want:
        raise InvalidInput(
            f"endpoints have shape {anchors.endpoints.shape}, expected {want}"
        )


def _check_position_time(spec: TrajectorySpec, t: float):
    if not (-_T_SLACK <= t <= spec.horizon + _T_SLACK):
        raise InvalidInput(f"t={t} outside [0, {spec.horizon}]")


def _check_velocity_time(spec: TrajectorySpec, t) -> None:
    # the hard constraint is the 1/t singularity; the top end gets a small
    # slack so finite-difference stencils may straddle the horizon
    t = np.asarray(t, dtype=float)
    if np.any(t < spec.t_min - _T_SLACK):
        raise SingularityGuard(f"t={t} below the t_min={spec.t_min} guard")
    if np.any(t > spec.horizon * (1.0 + 1e-3)):
        raise InvalidInput(f"t={t} above horizon {spec.horizon}")


def _superposed_mixing(s: np.ndarray, overlap: int):
    """Weights of the i.i.d. terminal draws inside the superposed path.

    Writing s = t/T and c_i = e_i - e_{i-1}, the path
    x0 + sum_i c_i s^i regroups as x0 (1 - s) + sum_i a_i e_i with
    a_i = s^i - s^{i+1} for i < overlap and a_K = s^K.  ``b`` holds the
    s-derivatives of ``a``.
    """
    s = np.asarray(s, dtype=float)
    i = np.arange(1, overlap + 1, dtype=float)
    si = s[..., None] ** i
    sim1 = s[..., None] ** (i - 1)
    a = si - si * s[..., None]
    a[..., -1] = si[..., -1]
    b = i * sim1 - (i + 1.0) * si
    b[..., -1] = overlap * sim1[..., -1]
    return a, b


def _superposed_coeffs(anchors: AnchorSet) -> np.ndarray:
    """Polynomial coefficients c_i = e_i - e_{i-1} with e_0 = x0."""
    chain = np.vstack([anchors.x0[None, :], anchors.endpoints])
    return np.diff(chain, axis=0)  # (overlap, d)


def position(spec: TrajectorySpec, anchors: AnchorSet, t: float) -> np.ndarray:
    """Point on the conditional trajectory at time ``t`` in ``[0, T]``."""
    _check_anchors(spec, anchors)
    _check_position_time(spec, t)
    s = t / spec.horizon
    x0 = anchors.x0
    e = anchors.endpoints
    if spec.family in (Family.LINEAR, Family.POISSON):
        return x0 + (e[0] - x0) * s
    if spec.family is Family.CURVE:
        return x0 + (e[0] - x0) * s**spec.curve_m
    if spec.family is Family.GAUSSIAN_BRIDGE:
        sch = spec.bridge_schedules()
        return np.asarray(sch.mu(t, x0), dtype=float) + float(sch.sigma(t)) * e[0]
    if spec.family is Family.SUPERPOSED_LINEAR:
        c = _superposed_coeffs(anchors)
        powers = s ** np.arange(1, spec.overlap + 1, dtype=float)
        return x0 + powers @ c
    raise InvalidInput(f"unknown family {spec.family}")


def velocity(spec: TrajectorySpec, anchors: AnchorSet, t: float) -> np.ndarray:
    """Time derivative of ``position`` at ``t`` in ``[t_min, T]``."""
    _check_anchors(spec, anchors)
    _check_velocity_time(spec, t)
    T = spec.horizon
    s = t / T
    x0 = anchors.x0
    e = anchors.endpoints
    if spec.family in (Family.LINEAR, Family.POISSON):
        return (e[0] - x0) / T
    if spec.family is Family.CURVE:
        m = spec.curve_m
        return (e[0] - x0) * m * s ** (m - 1.0) / T
    if spec.family is Family.GAUSSIAN_BRIDGE:
        sch = spec.bridge_schedules()
        return np.asarray(sch.mu_dt(t, x0), dtype=float) + float(sch.sigma_dt(t)) * e[0]
    if spec.family is Family.SUPERPOSED_LINEAR:
        c = _superposed_coeffs(anchors)
        i = np.arange(1, spec.overlap + 1, dtype=float)
        powers = i * s ** (i - 1.0)
        return (powers @ c) / T
    raise InvalidInput(f"unknown family {spec.family}")


def log_conditional_kernel(
    spec: TrajectorySpec, x0: np.ndarray, x_t: np.ndarray, t: float
) -> float:
    """Log of ``conditional_kernel``; the numerically safe form."""
    x0 = np.asarray(x0, dtype=float)
    x_t = np.asarray(x_t, dtype=float)
    if x0.shape != (spec.dimension,) or x_t.shape != (spec.dimension,):
        raise InvalidInput("x0/x_t dimension does not match the spec")
    out = log_kernel_grid(spec, x0[None, :], x_t[None, :], np.asarray([t], dtype=float))
    return float(out[0, 0])


def conditional_kernel(
    spec: TrajectorySpec, x0: np.ndarray, x_t: np.ndarray, t: float
) -> float:
    """Density of ``x_t`` given source ``x0`` at time ``t``.

    For the Poisson family this is the time component of the isotropic
    kernel (``poisson_kernel_full``), which plays the same weighting role
    even though it is not a per-time probability density.
    """
    return float(np.exp(log_conditional_kernel(spec, x0, x_t, t)))


def log_kernel_grid(
    spec: TrajectorySpec, sources: np.ndarray, x: np.ndarray, t: np.ndarray
) -> np.ndarray:
    """Log kernels for a batch of query points against many sources.

    Parameters
    ----------
    sources : (n, d) candidate data points x0.
    x       : (B, d) query states.
    t       : (B,) query times, all within [t_min, T].

    Returns
    -------
    (B, n) array of log kernel values.
    """
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.asarray(t, dtype=float)
    _check_velocity_time(spec, t)
    d = spec.dimension
    T = spec.horizon
    s = t / T  # (B,)
    if spec.family is Family.POISSON:
        r2 = np.sum((x[:, None, :] - sources[None, :, :]) ** 2, axis=-1)  # (B, n)
        rho2 = t[:, None] ** 2 + r2
        return (
            math.log(spec.poisson_a)
            + np.log(t)[:, None]
            - 0.5 * (d + 1) * np.log(rho2)
        )
    if spec.family in (Family.LINEAR, Family.CURVE):
        m = 1.0 if spec.family is Family.LINEAR else spec.curve_m
        scale = s ** (-m)  # (B,)
        z = sources[None, :, :] + (x[:, None, :] - sources[None, :, :]) * scale[:, None, None]
        return spec.terminal_logpdf(z) - (m * d) * np.log(s)[:, None]
    if spec.family is Family.GAUSSIAN_BRIDGE:
        sch = spec.bridge_schedules()
        mu = np.asarray(
            sch.mu(t[:, None, None], sources[None, :, :]), dtype=float
        )
        mu = np.broadcast_to(mu, (x.shape[0], sources.shape[0], d))
        sig = np.asarray(sch.sigma(t), dtype=float)  # (B,)
        z = (x[:, None, :] - mu) / sig[:, None, None]
        return spec.terminal_logpdf(z) - d * np.log(sig)[:, None]
    if spec.family is Family.SUPERPOSED_LINEAR:
        if spec.terminal_log_density is not None:
            raise InvalidInput(
                "superposed_linear kernels need the Gaussian terminal density"
            )
        a, _ = _superposed_mixing(s, spec.overlap)  # (B, K)
        var = spec.terminal_sigma**2 * np.sum(a * a, axis=-1)  # (B,)
        mean = (1.0 - s)[:, None, None] * sources[None, :, :]
        dev2 = np.sum((x[:, None, :] - mean) ** 2, axis=-1)
        return -0.5 * dev2 / var[:, None] - 0.5 * d * (np.log(var) + _LOG_2PI)[:, None]
    raise InvalidInput(f"unknown family {spec.family}")


def posterior_velocity_grid(
    spec: TrajectorySpec, sources: np.ndarray, x: np.ndarray, t: np.ndarray
) -> np.ndarray:
    """Per-source conditional mean velocity at each query point.

    Shape contract matches ``log_kernel_grid``; returns (B, n, d).  For
    linear, curve and bridge trajectories the endpoint is recoverable from
    ``(x0, x_t, t)`` so the conditional velocity is deterministic.  For the
    superposed family the velocity still fluctuates given ``(x0, x_t)`` and
    the Gaussian conditional mean is returned.
    """
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.asarray(t, dtype=float)
    _check_velocity_time(spec, t)
    T = spec.horizon
    s = t / T
    diff = x[:, None, :] - sources[None, :, :]  # (B, n, d)
    if spec.family in (Family.LINEAR, Family.POISSON):
        return diff / t[:, None, None]
    if spec.family is Family.CURVE:
        return spec.curve_m * diff / t[:, None, None]
    if spec.family is Family.GAUSSIAN_BRIDGE:
        sch = spec.bridge_schedules()
        mu = np.asarray(sch.mu(t[:, None, None], sources[None, :, :]), dtype=float)
        mu = np.broadcast_to(mu, diff.shape)
        mu_dt = np.asarray(sch.mu_dt(t[:, None, None], sources[None, :, :]), dtype=float)
        mu_dt = np.broadcast_to(mu_dt, diff.shape)
        sig = np.asarray(sch.sigma(t), dtype=float)
        sig_dt = np.asarray(sch.sigma_dt(t), dtype=float)
        return mu_dt + (sig_dt / sig)[:, None, None] * (x[:, None, :] - mu)
    if spec.family is Family.SUPERPOSED_LINEAR:
        a, b = _superposed_mixing(s, spec.overlap)
        ratio = np.sum(a * b, axis=-1) / np.sum(a * a, axis=-1)  # (B,)
        mean = (1.0 - s)[:, None, None] * sources[None, :, :]
        return (-sources[None, :, :] + ratio[:, None, None] * (x[:, None, :] - mean)) / T
    raise InvalidInput(f"unknown family {spec.family}")


def poisson_kernel_full(
    d: int, a: float, t: float, x_t: np.ndarray, x_0: np.ndarray
) -> np.ndarray:
    """Isotropic inverse-power kernel as a (d+1)-vector field.

    Returns ``a * (t, x_t - x_0) / (t**2 + ||x_t - x_0||**2)**((d+1)/2)``.
    The time component is nonnegative for t >= 0 and the spatial part is
    odd in ``x_t - x_0``.
    """
    x_t = np.asarray(x_t, dtype=float)
    x_0 = np.asarray(x_0, dtype=float)
    if x_t.shape != (d,) or x_0.shape != (d,):
        raise InvalidInput(f"x_t/x_0 must have shape ({d},)")
    diff = x_t - x_0
    rho2 = t * t + float(diff @ diff)
    if rho2 == 0.0:
        raise SingularityGuard("kernel evaluated at its source point")
    ext = np.concatenate([[t], diff])
    return a * ext / rho2 ** (0.5 * (d + 1))
