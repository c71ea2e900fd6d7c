"""Terminal-prior sampling and training-pair construction.

Training pairs couple a data point ``x0`` with a perturbed state
``(x_t, t)`` and the conditional velocity at that state, which is the
regression target.  Times are drawn uniformly on ``[t_min, T]`` and
endpoints from the terminal prior, so that at ``t = T`` the perturbed
states follow the prior exactly.

The radial perturbation mode keeps the classic construction
``x_t = x0 + ||eps_x|| (1+tau)^m u`` with ``t = |eps_t| (1+tau)^m``; the
the ratio ``||eps_x|| / |eps_t|`` then follows the heavy-tailed law
``r**(d-1) / (1+r**2)**((d+1)/2)`` checked by the verify module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidInput
from .trajectory import AnchorSet, Family, TrajectorySpec, position, velocity

_BALL_LOG_EPS = -np.inf


class PriorKind(str, Enum):
    PFGM_RADIAL = "pfgm_radial"
    STANDARD_GAUSSIAN = "standard_gaussian"
    UNIFORM_BALL = "uniform_ball"


@dataclass(frozen=True)
class PriorSpec:
    """Terminal distribution the trajectories regress from.

    ``sigma`` scales the Gaussian draws, ``tau``/``m_max`` control the
    exponential range amplification of the radial mode, ``horizon`` bounds
    the uniform draws of the amplified-uniform variant, and ``radius``
    sizes the uniform ball.
    """

    kind: PriorKind = PriorKind.STANDARD_GAUSSIAN
    sigma: float = 1.0
    tau: float = 0.05
    m_max: float = 100.0
    horizon: float = 1.0
    radius: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise InvalidInput("prior sigma must be positive")
        if self.tau < 0.0 or self.m_max < 0.0:
            raise InvalidInput("tau and m_max must be nonnegative")
        if self.horizon <= 0.0 or self.radius <= 0.0:
            raise InvalidInput("horizon and radius must be positive")


@dataclass(frozen=True)
class TrainingPair:
    """One supervised example: state (x_t, t) and its target velocity."""

    x0: np.ndarray
    anchors: AnchorSet
    t: float
    x_t: np.ndarray
    target: np.ndarray


@dataclass(frozen=True)
class TrainingBatch:
    """Column-major view of many training pairs (fast path for training)."""

    x0: np.ndarray      # (B, d)
    t: np.ndarray       # (B,)
    x_t: np.ndarray     # (B, d)
    target: np.ndarray  # (B, d)

    def __len__(self):
        return self.x0.shape[0]


def sample_unit_sphere(d: int, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Uniform unit vector(s) on the (d-1)-sphere via Gaussian normalization."""
    if d < 1:
        raise InvalidInput("dimension must be >= 1")
    size = (d,) if n is None else (n, d)
    while True:
        g = rng.standard_normal(size)
        norm = np.linalg.norm(g, axis=-1, keepdims=True)
        if np.all(norm > 0.0):
            return g / norm


def sample_pfgm(
    x0: np.ndarray, prior: PriorSpec, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """Radial perturbation with exponential range amplification.

    Draws ``(eps_x, eps_t)`` standard Gaussian in d+1 dims scaled by
    ``sigma`` and ``m`` uniform on ``[0, m_max]``, then returns
    ``x_t = x0 + ||eps_x|| (1+tau)^m u`` and ``t = |eps_t| (1+tau)^m``.
    """
    if prior.kind is not PriorKind.PFGM_RADIAL:
        raise InvalidInput("sample_pfgm needs a pfgm_radial prior")
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[0]
    eps_x = prior.sigma * rng.standard_normal(d)
    eps_t = prior.sigma * rng.standard_normal()
    m = rng.uniform(0.0, prior.m_max) if prior.m_max > 0.0 else 0.0
    u = sample_unit_sphere(d, rng)
    amp = (1.0 + prior.tau) ** m
    x_t = x0 + np.linalg.norm(eps_x) * amp * u
    t = abs(eps_t) * amp
    return x_t, float(t)


def sample_amplified_uniform(
    x0: np.ndarray, prior: PriorSpec, exponent: float, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """Uniform-driven variant of the radial perturbation.

    ``(eps_x, eps_t)`` are uniform on ``[0, horizon]`` per coordinate and
    the fixed amplification exponent replaces the uniform ``m`` draw; with
    ``tau = 0`` this reduces to ``x_t = x0 + ||eps_x|| u``, ``t = |eps_t|``.
    """
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[0]
    eps_x = rng.uniform(0.0, prior.horizon, size=d)
    eps_t = rng.uniform(0.0, prior.horizon)
    u = sample_unit_sphere(d, rng)
    amp = (1.0 + prior.tau) ** exponent
    return x0 + np.linalg.norm(eps_x) * amp * u, float(eps_t * amp)


def sample_terminal(
    prior: PriorSpec,
    d: int,
    n: int,
    rng: np.random.Generator,
    t_ref: float = 1.0,
) -> np.ndarray:
    """Draw ``n`` terminal states from the prior, shape (n, d).

    For the radial mode the state at reference time ``t_ref`` sits on the
    ray ``t_ref * (||eps_x|| / |eps_t|) * u``.
    """
    if d < 1:
        raise InvalidInput("dimension must be >= 1")
    if n < 0:
        raise InvalidInput("sample count must be nonnegative")
    if n == 0:
        return np.zeros((0, d))
    if prior.kind is PriorKind.STANDARD_GAUSSIAN:
        return prior.sigma * rng.standard_normal((n, d))
    if prior.kind is PriorKind.UNIFORM_BALL:
        u = sample_unit_sphere(d, rng, n)
        r = prior.radius * rng.uniform(0.0, 1.0, size=n) ** (1.0 / d)
        return r[:, None] * u
    if prior.kind is PriorKind.PFGM_RADIAL:
        eps_x = prior.sigma * rng.standard_normal((n, d))
        eps_t = prior.sigma * rng.standard_normal(n)
        u = sample_unit_sphere(d, rng, n)
        r = np.linalg.norm(eps_x, axis=-1) / np.abs(eps_t)
        return t_ref * r[:, None] * u
    raise InvalidInput(f"unknown prior kind {prior.kind}")


def prior_log_density(prior: PriorSpec, z: np.ndarray) -> np.ndarray:
    """Log density of the prior at points ``z`` of shape (..., d)."""
    z = np.asarray(z, dtype=float)
    d = z.shape[-1]
    if prior.kind is PriorKind.STANDARD_GAUSSIAN:
        return (
            -0.5 * np.sum(z * z, axis=-1) / prior.sigma**2
            - d * (math.log(prior.sigma) + 0.5 * math.log(2.0 * math.pi))
        )
    if prior.kind is PriorKind.UNIFORM_BALL:
        log_vol = (
            0.5 * d * math.log(math.pi)
            - math.lgamma(0.5 * d + 1.0)
            + d * math.log(prior.radius)
        )
        inside = np.sum(z * z, axis=-1) <= prior.radius**2
        return np.where(inside, -log_vol, _BALL_LOG_EPS)
    raise InvalidInput(f"no closed-form density for prior kind {prior.kind}")


def radial_density(r, d: int):
    """Unnormalized law of the ratio ``||eps_x|| / |eps_t|``.

    ``r**(d-1) / (1 + r**2)**((d+1)/2)`` for r >= 0.
    """
    if d < 1:
        raise InvalidInput("dimension must be >= 1")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0.0):
        raise InvalidInput("radius must be nonnegative")
    return r ** (d - 1) / (1.0 + r * r) ** (0.5 * (d + 1))


def training_pair(
    spec: TrajectorySpec, x0: np.ndarray, t: float, endpoints: np.ndarray
) -> TrainingPair:
    """Deterministic constructor: given anchors and a time, fill in the rest."""
    anchors = AnchorSet(x0=np.asarray(x0, dtype=float), endpoints=endpoints)
    x_t = position(spec, anchors, t)
    target = velocity(spec, anchors, t)
    return TrainingPair(anchors.x0, anchors, float(t), x_t, target)


def sample_training_pair(
    spec: TrajectorySpec,
    prior: PriorSpec,
    x0: np.ndarray,
    rng: np.random.Generator,
) -> TrainingPair:
    """Draw one training pair: t uniform on [t_min, T], endpoints from the prior."""
    if spec.family is Family.POISSON:
        raise InvalidInput(
            "the poisson family perturbs with sample_pfgm, not trajectory anchors"
        )
    x0 = np.asarray(x0, dtype=float)
    t = rng.uniform(spec.t_min, spec.horizon)
    endpoints = sample_terminal(
        prior, spec.dimension, spec.endpoints_required, rng, t_ref=spec.horizon
    )
    return training_pair(spec, x0, t, endpoints)


def sample_training_batch(
    spec: TrajectorySpec,
    prior: PriorSpec,
    x0: np.ndarray,
    rng: np.random.Generator,
) -> TrainingBatch:
    """Vectorized ``sample_training_pair`` over a batch of data points.

    ``x0`` has shape (B, d); one time and one endpoint set are drawn per
    row.  The arithmetic matches the scalar path exactly.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    B, d = x0.shape
    if d != spec.dimension:
        raise InvalidInput("batch dimension does not match the spec")
    t = rng.uniform(spec.t_min, spec.horizon, size=B)
    k = spec.endpoints_required
    eps = sample_terminal(prior, d, B * k, rng, t_ref=spec.horizon).reshape(B, k, d)
    s = t / spec.horizon
    if spec.family is Family.LINEAR:
        x_t = x0 + (eps[:, 0, :] - x0) * s[:, None]
        target = (eps[:, 0, :] - x0) / spec.horizon
    elif spec.family is Family.CURVE:
        m = spec.curve_m
        x_t = x0 + (eps[:, 0, :] - x0) * (s**m)[:, None]
        target = (eps[:, 0, :] - x0) * (m * s ** (m - 1.0))[:, None] / spec.horizon
    elif spec.family is Family.GAUSSIAN_BRIDGE:
        sch = spec.bridge_schedules()
        mu = np.asarray(sch.mu(t[:, None], x0), dtype=float)
        mu_dt = np.asarray(sch.mu_dt(t[:, None], x0), dtype=float)
        sig = np.asarray(sch.sigma(t), dtype=float)
        sig_dt = np.asarray(sch.sigma_dt(t), dtype=float)
        x_t = mu + sig[:, None] * eps[:, 0, :]
        target = mu_dt + sig_dt[:, None] * eps[:, 0, :]
    elif spec.family is Family.SUPERPOSED_LINEAR:
        chain = np.concatenate([x0[:, None, :], eps], axis=1)  # (B, k+1, d)
        c = np.diff(chain, axis=1)  # (B, k, d)
        i = np.arange(1, k + 1, dtype=float)
        pos_pow = s[:, None] ** i
        vel_pow = i * s[:, None] ** (i - 1.0)
        x_t = x0 + np.einsum("bi,bid->bd", pos_pow, c)
        target = np.einsum("bi,bid->bd", vel_pow, c) / spec.horizon
    else:
        raise InvalidInput(f"unsupported family {spec.family} for batch sampling")
    return TrainingBatch(x0=x0, t=t, x_t=x_t, target=target)
