"""Composite pulse response, ISI extraction and the per-element split.

Transmission is a single unit rectangular pulse of width ``T``; its spectrum
at DC is ``T``, so ``Y_k(0) / T`` equals the sum of the composite taps.  All
quantities below are stored in those ``Y/T`` units.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet

DEFAULT_WINDOW = 16


@dataclass(frozen=True)
class IsiWindow:
    """Number of symbols after the peak kept in the ISI boundary.

    Precursors (bins before the direct peak) are always inside it.
    """

    W: int = DEFAULT_WINDOW

    def __post_init__(self):
        if self.W < 1:
            raise ValueError("window must be >= 1 symbol")


def _window(w) -> IsiWindow:
    if w is None:
        return IsiWindow()
    return w if isinstance(w, IsiWindow) else IsiWindow(int(w))


@dataclass(frozen=True)
class CompositeResponse:
    samples: np.ndarray  # bins 0 .. peak_bin + W
    peak_bin: int

    @property
    def peak_value(self) -> complex:
        return complex(self.samples[self.peak_bin])


@dataclass(frozen=True)
class IsiDecomposition:
    """Everything the optimizer needs about the channel, per user.

    ``I_k(theta) = C[k] - y0[k] + sum_n B[k, n] * exp(-1j * theta[n])``.
    """

    y0: np.ndarray  # (K,) peak samples
    C: np.ndarray  # (K,) sum of direct taps inside the window
    B: np.ndarray  # (K, N) reflected gains inside the window
    T: float = 1e-3

    @property
    def num_users(self) -> int:
        return self.B.shape[0]

    @property
    def num_elements(self) -> int:
        return self.B.shape[1]

    @property
    def direct_isi(self) -> np.ndarray:
        return self.C - self.y0


def peak_bin(ch: ChannelSet, k: int) -> int:
    """Index of the strongest direct tap of user k on the delay grid."""
    line = ch.direct[k]
    return int(line.delays[np.argmax(np.abs(line.gains))])


def composite_response(ch: ChannelSet, theta, k: int, w=None) -> CompositeResponse:
    """Received single-pulse samples of user k for phase vector ``theta``."""
    w = _window(w)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (ch.num_elements,) or not np.all(np.isfinite(theta)):
        raise ValueError("theta must be a finite vector of length N")
    p = peak_bin(ch, k)
    n_bins = p + w.W + 1
    samples = ch.direct[k].dense(n_bins)
    offsets = ch.reflected_delays[k]
    if offsets.max() > w.W:
        warnings.warn("reflected taps fall outside the ISI window", stacklevel=2)
    inside = offsets <= w.W
    contrib = ch.reflected_gains[k, inside] * np.exp(-1j * theta[inside])
    np.add.at(samples, p + offsets[inside], contrib)
    return CompositeResponse(samples, p)


def isi_time_domain(resp: CompositeResponse) -> complex:
    """Sum of every in-window sample except the peak."""
    return complex(resp.samples.sum() - resp.samples[resp.peak_bin])


def decompose_channels(ch: ChannelSet, w=None) -> IsiDecomposition:
    w = _window(w)
    K = ch.num_users
    y0 = np.empty(K, dtype=complex)
    C = np.empty(K, dtype=complex)
    for k, line in enumerate(ch.direct):
        p = peak_bin(ch, k)
        y0[k] = line.gains[np.argmax(np.abs(line.gains))]
        C[k] = line.gains[line.delays <= p + w.W].sum()
    B = np.where(ch.reflected_delays <= w.W, ch.reflected_gains, 0)
    return IsiDecomposition(y0, C, B.astype(complex), ch.T)


def normalize_peak_power(ch: ChannelSet) -> ChannelSet:
    """Rescale each user so the received power at the peak is 1."""
    peaks = np.array([np.abs(line.gains).max() for line in ch.direct])
    return ch.scaled(1.0 / peaks)


def dc_response(dec: IsiDecomposition, theta) -> np.ndarray:
    """``Y_k(0) / T`` for all users."""
    return dec.C + dec.B @ np.exp(-1j * np.asarray(theta, dtype=float))


def isi_frequency(dec: IsiDecomposition, theta, k: int | None = None):
    """ISI from the DC identity ``I_k = Y_k(0)/T - y_k(0)``.

    Returns the vector over users when ``k`` is None.
    """
    I = dc_response(dec, theta) - dec.y0
    return I if k is None else complex(I[k])


def decompose(dec: IsiDecomposition, theta, k: int, n: int) -> tuple[complex, complex]:
    """``(A_kn, B_kn)`` with ``Y_k(0)/T = A_kn + B_kn exp(-1j theta_n)``."""
    theta = np.asarray(theta, dtype=float)
    others = np.delete(np.arange(dec.num_elements), n)
    A = dec.C[k] + np.sum(dec.B[k, others] * np.exp(-1j * theta[others]))
    return complex(A), complex(dec.B[k, n])


def split_all(dec: IsiDecomposition, theta) -> np.ndarray:
    """All ``A_kn`` at once, shape (K, N)."""
    terms = dec.B * np.exp(-1j * np.asarray(theta, dtype=float))
    return (dec.C + terms.sum(axis=1))[:, None] - terms


def isi_powers(dec: IsiDecomposition, theta) -> np.ndarray:
    return np.abs(isi_frequency(dec, theta)) ** 2


def max_isi_power(dec: IsiDecomposition, theta) -> tuple[float, np.ndarray]:
    """Worst-user ISI power and the per-user powers."""
    p = isi_powers(dec, theta)
    return float(p.max()), p
