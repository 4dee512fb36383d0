"""Benchmark phase configurations: random, quantized, no RIS, 0/pi pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import isi
from .channel import ChannelSet

TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class QuantizerSpec:
    bits: int = 2

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("bits must be >= 1")

    @property
    def codebook(self) -> np.ndarray:
        levels = 2 ** self.bits
        return TWO_PI * np.arange(levels) / levels


def random_phases(N: int, rng: np.random.Generator) -> np.ndarray:
    if N < 1:
        raise ValueError("N must be >= 1")
    return rng.uniform(0, TWO_PI, N)


def quantize_phases(theta, q: QuantizerSpec = QuantizerSpec()) -> np.ndarray:
    """Nearest codebook phase under circular distance.

    Ties go to the lower codebook index.
    """
    theta = np.mod(np.asarray(theta, dtype=float), TWO_PI)
    book = q.codebook
    diff = np.abs(theta[..., None] - book)
    dist = np.minimum(diff, TWO_PI - diff)
    return book[np.argmin(dist, axis=-1)]


def non_ris_isi(ch: ChannelSet, window=None) -> float:
    """Worst-user ISI power with the surface removed."""
    dec = isi.decompose_channels(ch.without_ris(), window)
    return isi.max_isi_power(dec, np.zeros(ch.num_elements))[0]


def remark1_phases(N: int) -> np.ndarray:
    """Alternating ``[0, pi, 0, pi, ...]``; cancels equal neighbours pairwise."""
    if N % 2:
        raise ValueError("paired 0/pi phases need an even number of elements")
    return np.tile([0.0, np.pi], N // 2)
