"""ANN-to-SNN conversion: weight copy and sequential threshold balancing."""

from __future__ import annotations

import numpy as np

from .encoding import poisson_encode
from .errors import ConfigError, DegenerateThresholdError, ShapeError
from .network import ArchitectureSpec, NetworkParams, check_params, init_neuron_state, snn_forward

ThresholdSet = dict  # population name -> threshold, front to back


def copy_weights(ann: NetworkParams, snn: NetworkParams, arch: ArchitectureSpec | None = None):
    """Deep-copy every ANN weight into ``snn``; thresholds are reset."""
    if arch is not None:
        check_params(ann, arch)
    if snn.weights and set(snn.weights) != set(ann.weights):
        raise ConfigError(f"architecture mismatch: {sorted(ann.weights)} vs {sorted(snn.weights)}")
    for name, w in ann.weights.items():
        if name in snn.weights and snn.weights[name].shape != w.shape:
            raise ShapeError(f"weight {name!r}: {w.shape} vs {snn.weights[name].shape}")
    snn.weights = {name: w.copy() for name, w in ann.weights.items()}
    snn.thresholds = {}


def balance_thresholds(snn: NetworkParams, arch: ArchitectureSpec, images, timesteps: int,
                       seed, sample_ids=None, batch_size: int = 64, segment: int | None = 25,
                       floor: float | None = None, scale: float = 1.0, leak: float = 1.0
                       ) -> ThresholdSet:
    """Set each hidden population's threshold to its largest input current.

    Populations are processed front to back. For population ``l`` the
    calibration images are Poisson-encoded (same seed for every layer),
    propagated through populations ``< l`` with their already assigned
    thresholds, and the maximum of ``l``'s weighted input over all neurons,
    samples and steps becomes its threshold. Populations inside residual
    blocks are pinned to 1. ``scale`` multiplies every balanced threshold;
    ``floor`` replaces a non-positive maximum instead of raising.
    """
    check_params(snn, arch)
    images = np.asarray(images)
    n = images.shape[0]
    if n == 0:
        raise ConfigError("calibration batch is empty")
    ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
    seg = min(segment or timesteps, timesteps)
    snn.thresholds = {}
    result: ThresholdSet = {}
    for pop in arch.populations:
        if pop in arch.fixed_unity:
            snn.thresholds[pop] = result[pop] = 1.0
            continue
        v = 0.0
        for start in range(0, n, batch_size):
            sl = slice(start, start + batch_size)
            train = poisson_encode(images[sl], timesteps, seed, ids[sl])
            state = init_neuron_state(train.shape[1], arch, dropout=False)
            for t in range(0, timesteps, seg):
                currents, _ = snn_forward(snn, arch, train[t:t + seg], state, leak,
                                          record=False, stop_at=pop)
                v = max(v, float(currents.max()))
        if not v > 0:
            if floor is None:
                raise DegenerateThresholdError(
                    f"population {pop!r} received no positive input during calibration "
                    f"(max current {v}); set a threshold floor to continue")
            v = float(floor)
        snn.thresholds[pop] = result[pop] = v * scale
    return result


def convert(ann: NetworkParams, arch: ArchitectureSpec, images, timesteps: int, seed,
            **kwargs) -> NetworkParams:
    """Copy weights and balance thresholds; returns a new parameter set."""
    snn = NetworkParams()
    copy_weights(ann, snn, arch)
    balance_thresholds(snn, arch, images, timesteps, seed, **kwargs)
    return snn
