"""Class-balanced batch construction and training-time window augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import round_half_up
from .errors import InfeasibleSamplerError, ValidationError


@dataclass(frozen=True)
class SamplerConfig:
    positive_fraction: float = 0.5
    jitter_samples: int = 10
    noise_std_fraction: float = 0.1
    batch_size: int = 32

    def __post_init__(self):
        if not 0 < self.positive_fraction < 1:
            raise ValidationError("positive_fraction must lie in (0, 1)")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2")
        if round_half_up(self.positive_fraction * self.batch_size) < 1:
            raise ValidationError("positive_fraction * batch_size must be >= 1")
        if self.jitter_samples < 0 or self.noise_std_fraction < 0:
            raise ValidationError("jitter and noise settings must be >= 0")


class BalancedBatchSampler:
    """Oversamples positives to a fixed per-batch count; negatives pass
    without replacement, reshuffling only when the pool runs dry.

    One epoch is defined as one pass over the negative pool
    (``batches_per_epoch`` batches). The emitted index sequence is a pure
    function of the seed.
    """

    def __init__(self, labels, config: SamplerConfig, seed: int):
        labels = np.asarray(labels)
        self.positives = np.flatnonzero(labels == 1)
        self.negatives = np.flatnonzero(labels == 0)
        if len(self.positives) == 0 or len(self.negatives) == 0:
            raise InfeasibleSamplerError(
                f"need both classes to balance batches; got {len(self.positives)} "
                f"positives and {len(self.negatives)} negatives"
            )
        self.config = config
        self.n_pos_per_batch = round_half_up(config.positive_fraction * config.batch_size)
        self.n_neg_per_batch = config.batch_size - self.n_pos_per_batch
        if self.n_neg_per_batch < 1:
            raise InfeasibleSamplerError("batch has no negative slots")
        self.batches_per_epoch = math.ceil(len(self.negatives) / self.n_neg_per_batch)
        self._rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed,))))
        self._neg_order = self._rng.permutation(self.negatives)
        self._cursor = 0

    def _next_negatives(self) -> np.ndarray:
        out = []
        need = self.n_neg_per_batch
        while need:
            if self._cursor == len(self._neg_order):
                self._neg_order = self._rng.permutation(self.negatives)
                self._cursor = 0
            chunk = self._neg_order[self._cursor : self._cursor + need]
            out.append(chunk)
            self._cursor += len(chunk)
            need -= len(chunk)
        return np.concatenate(out)

    def next_batch(self) -> np.ndarray:
        """Indices of the next batch: oversampled positives, then negatives."""
        pos = self.positives[
            self._rng.integers(0, len(self.positives), size=self.n_pos_per_batch)
        ]
        return np.concatenate([pos, self._next_negatives()])

    def epoch(self):
        for _ in range(self.batches_per_epoch):
            yield self.next_batch()


def make_balanced_batches(labels, config: SamplerConfig, seed: int) -> BalancedBatchSampler:
    return BalancedBatchSampler(labels, config, seed)


def augment_window(
    signal: np.ndarray,
    start: int,
    n_samples: int,
    jitter_samples: int,
    noise_std_fraction: float,
    channel_std: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Training-time augmentation: re-slice the window at a jittered start
    (falling back to zero shift at session edges), then add channel-scaled
    Gaussian noise. jitter = noise = 0 is the identity.
    """
    total = signal.shape[1]
    if jitter_samples > 0:
        shift = int(rng.integers(-jitter_samples, jitter_samples + 1))
        moved = start + shift
        if moved < 0 or moved + n_samples > total:
            moved = start
    else:
        moved = start
    window = signal[:, moved : moved + n_samples]
    if noise_std_fraction > 0:
        noise = rng.standard_normal(window.shape, dtype=np.float32)
        scale = (noise_std_fraction * np.asarray(channel_std, dtype=np.float32))[:, None]
        return window + noise * scale
    return np.array(window, dtype=np.float32)
