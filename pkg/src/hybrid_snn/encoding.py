"""Poisson rate coding of intensity images into binary spike trains."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, InputError
from .tensor import get_dtype


def _entropy(seed) -> list:
    if isinstance(seed, (tuple, list)):
        return [int(x) for x in seed]
    return [int(seed)]


def sample_rng(seed, sample_id: int) -> np.random.Generator:
    """Independent counter-based stream for one sample under one seed.

    ``seed`` is an int or a tuple of ints (e.g. ``(seed, epoch)``).
    """
    entropy = _entropy(seed) + [int(sample_id)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def poisson_encode(images, timesteps: int, seed, sample_ids=None,
                   dtype=None) -> np.ndarray:
    """Encode ``images`` (batch, ...) with values in [0, 1] as spikes.

    Returns an array of shape ``(timesteps, batch, ...)``. At every step and
    pixel a uniform draw on [0, 1) is compared against the intensity; a draw
    strictly below it emits a spike. Sample ``b`` draws from its own stream
    keyed by ``(seed, sample_ids[b])`` so the train of a given sample does not
    depend on which other samples share the batch. ``sample_ids`` defaults to
    ``range(batch)``.
    """
    images = np.asarray(images)
    if timesteps < 1:
        raise ConfigError(f"timesteps must be >= 1, got {timesteps}")
    if images.size and (np.nanmin(images) < 0 or np.nanmax(images) > 1 or np.isnan(images).any()):
        raise InputError("pixel intensities must lie in [0, 1]")
    batch = images.shape[0]
    ids = np.arange(batch) if sample_ids is None else np.asarray(sample_ids)
    if ids.shape != (batch,):
        raise InputError(f"expected {batch} sample ids, got shape {ids.shape}")
    dtype = dtype or get_dtype()
    out = np.empty((timesteps,) + images.shape, dtype=dtype)
    per_sample = images.shape[1:]
    for b in range(batch):
        draws = sample_rng(seed, ids[b]).random((timesteps,) + per_sample)
        out[:, b] = draws < images[b]
    return out
