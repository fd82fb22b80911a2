"""Discrete-time leaky integrate-and-fire neurons and surrogate gradients.

Hidden neurons follow

    u[t] = leak * u[t-1] + I[t] - v * o[t-1]
    o[t] = 1 if u[t] > v else 0

(soft reset, one-step-delayed), and the output layer integrates its input
without leak, threshold or reset. The spike nonlinearity is differentiated
through one of three surrogates: the spike-time rule ``alpha*exp(-beta*dt)``
where ``dt`` is the time since the neuron's latest spike, or a linear or
exponential function of ``|u - v|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import ConfigError, NumericError, ShapeError
from .tensor import get_dtype

NEVER_SPIKED = -1000
FAMILIES = {"stdb": _kernels.FAMILY_STDB, "linear": _kernels.FAMILY_LINEAR,
            "exp": _kernels.FAMILY_EXP}
DEFAULT_BETA = {"stdb": 0.01, "linear": 0.0, "exp": 1.0}


@dataclass(frozen=True)
class NeuronConfig:
    leak: float = 1.0
    threshold: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.leak <= 1.0:
            raise ConfigError(f"leak must lie in (0, 1], got {self.leak}")
        if not self.threshold > 0.0:
            raise ConfigError(f"threshold must be positive, got {self.threshold}")


@dataclass
class LifState:
    """Membrane potentials, latest spike times and last step's spikes."""

    u: np.ndarray
    s: np.ndarray
    prev_spikes: np.ndarray

    @classmethod
    def zeros(cls, shape, dtype=None) -> "LifState":
        dtype = dtype or get_dtype()
        return cls(u=np.zeros(shape, dtype=dtype),
                   s=np.full(shape, NEVER_SPIKED, dtype=np.int32),
                   prev_spikes=np.zeros(shape, dtype=dtype))

    @property
    def shape(self):
        return self.u.shape

    def copy(self) -> "LifState":
        return LifState(self.u.copy(), self.s.copy(), self.prev_spikes.copy())


@dataclass(frozen=True)
class SurrogateConfig:
    family: str = "stdb"
    alpha: float = 0.3
    beta: float = 0.01
    lut: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown surrogate family {self.family!r}; "
                              f"expected one of {sorted(FAMILIES)}")
        if not self.alpha > 0 or self.beta < 0:
            raise ConfigError(f"surrogate needs alpha > 0 and beta >= 0, got "
                              f"alpha={self.alpha}, beta={self.beta}")

    @classmethod
    def default(cls, family: str) -> "SurrogateConfig":
        return cls(family=family, beta=DEFAULT_BETA.get(family, 0.01))

    @property
    def code(self) -> int:
        return FAMILIES[self.family]

    def with_lut(self, timesteps: int, dtype=None) -> "SurrogateConfig":
        """Attach the precomputed spike-time table covering ``dt = 0..T+1000``."""
        if self.family != "stdb":
            return self
        return replace(self, lut=build_lut(self.alpha, self.beta, timesteps, dtype))


def build_lut(alpha: float, beta: float, timesteps: int, dtype=None) -> np.ndarray:
    dtype = np.dtype(dtype or get_dtype())
    dt = np.arange(timesteps - NEVER_SPIKED + 1).astype(dtype)
    return dtype.type(alpha) * np.exp(-dtype.type(beta) * dt)


# -- single-step reference dynamics ------------------------------------------

def lif_step(state: LifState, input_current: np.ndarray, cfg: NeuronConfig, t: int,
             name: str = "layer") -> np.ndarray:
    """Advance one time step in place and return the binary spikes."""
    if input_current.shape != state.u.shape:
        raise ShapeError(f"{name}: input current {input_current.shape} != state {state.u.shape}")
    if t < 1:
        raise ConfigError(f"time steps start at 1, got {t}")
    dt = state.u.dtype.type
    u = dt(cfg.leak) * state.u + input_current
    u = np.where(state.prev_spikes != 0, u - dt(cfg.threshold), u)
    if not np.all(np.isfinite(u)):
        raise NumericError(f"{name}: non-finite membrane potential at t={t}")
    spikes = (u > dt(cfg.threshold)).astype(state.u.dtype)
    state.u[...] = u
    state.s[spikes > 0] = t
    state.prev_spikes[...] = spikes
    return spikes


def output_accumulate(state: LifState, input_current: np.ndarray) -> np.ndarray:
    """Non-firing integrator: ``u += input``."""
    if input_current.shape != state.u.shape:
        raise ShapeError(f"output: input {input_current.shape} != state {state.u.shape}")
    state.u += input_current
    return state.u


# -- surrogate gradients -----------------------------------------------------

def stdb_surrogate(t: int, s, cfg: SurrogateConfig) -> np.ndarray:
    s = np.asarray(s)
    dt = np.asarray(t - s.astype(np.int64))
    if cfg.lut is not None:
        return cfg.lut[dt]
    dtype = get_dtype()
    return dtype.type(cfg.alpha) * np.exp(-dtype.type(cfg.beta) * dt.astype(dtype))


def linear_surrogate(u, v, alpha) -> np.ndarray:
    u = np.asarray(u)
    dt = u.dtype.type if u.dtype.kind == "f" else get_dtype().type
    return dt(alpha) * np.maximum(dt(0), dt(1) - np.abs(u - dt(v)))


def exp_surrogate(u, v, alpha, beta) -> np.ndarray:
    u = np.asarray(u)
    dt = u.dtype.type if u.dtype.kind == "f" else get_dtype().type
    return dt(alpha) * np.exp(-dt(beta) * np.abs(u - dt(v)))


# -- time-batched scans (kernel-backed) --------------------------------------

def lif_scan(state: LifState, currents: np.ndarray, cfg: NeuronConfig, t0: int,
             name: str = "layer"):
    """Run :func:`lif_step` for ``currents.shape[0]`` steps starting at ``t0``.

    Returns ``(spikes, u_rec, s_rec, n_spikes)``; the arrays are shaped
    like ``currents``.
    """
    steps = currents.shape[0]
    if currents.shape[1:] != state.u.shape:
        raise ShapeError(f"{name}: currents {currents.shape} do not match state {state.u.shape}")
    if t0 < 1:
        raise ConfigError(f"time steps start at 1, got {t0}")
    dtype = state.u.dtype
    flat = np.ascontiguousarray(currents, dtype=dtype).reshape(steps, -1)
    u, s, prev = (a.reshape(-1) for a in (state.u, state.s, state.prev_spikes))
    spikes, u_rec, s_rec, n_bad, n_spikes = _kernels.lif_forward_scan(
        flat, u, s, prev, cfg.threshold, cfg.leak, t0)
    if n_bad:
        raise NumericError(f"{name}: {n_bad} non-finite membrane value(s) in steps "
                           f"{t0}..{t0 + steps - 1}")
    shape = currents.shape
    return spikes.reshape(shape), u_rec.reshape(shape), s_rec.reshape(shape), n_spikes


def lif_scan_backward(grad_spikes: np.ndarray, u_rec: np.ndarray, s_rec: np.ndarray,
                      cfg: NeuronConfig, surrogate: SurrogateConfig, t0: int,
                      carry: np.ndarray | None = None) -> np.ndarray:
    """Adjoint of :func:`lif_scan`: dL/dI for each step from dL/do."""
    steps = grad_spikes.shape[0]
    shape = grad_spikes.shape
    dtype = u_rec.dtype
    if carry is None:
        carry = np.zeros(int(np.prod(shape[1:])), dtype=dtype)
    lut = surrogate.lut if surrogate.family == "stdb" else None
    if lut is not None and lut.shape[0] <= t0 + steps - 1 - NEVER_SPIKED:
        raise ConfigError(f"surrogate table of size {lut.shape[0]} too short for t={t0 + steps - 1}")
    g = _kernels.lif_backward_scan(
        grad_spikes.reshape(steps, -1), u_rec.reshape(steps, -1), s_rec.reshape(steps, -1),
        cfg.threshold, cfg.leak, t0, surrogate.code, surrogate.alpha, surrogate.beta,
        lut, carry)
    return g.reshape(shape)
