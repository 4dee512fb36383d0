"""Scenario geometry, path loss and symbol-spaced multipath channels.

All delays live on an integer grid in units of the symbol interval ``T``.
The direct BS-user link is a Saleh-Valenzuela tapped delay line; every RIS
element contributes one reflected tap per user.  Reflected gains never carry
the element phase shift, so ``theta`` enters downstream only through
``exp(-1j * theta_n)``.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class ConfigurationError(ValueError):
    """Raised for scenario parameters that violate a model constraint."""


class Position3(NamedTuple):
    x: float
    y: float
    z: float

    def asarray(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class ScenarioConfig:
    num_users: int = 4
    num_bs_antennas: int = 10
    num_elements: int = 100
    element_size: float = 0.02
    bs_height: float = 25.0
    ris_height: float = 25.0
    square_side: float = 100.0
    bs_to_square: float = 100.0
    bs_ris_horizontal: float = 100.0
    ris_offset: float = 50.0
    grid: bool = True

    def validate(self) -> None:
        if self.num_users < 1:
            raise ConfigurationError("K must be >= 1")
        if self.num_elements < 1:
            raise ConfigurationError("N must be >= 1")
        if self.grid and math.isqrt(self.num_elements) ** 2 != self.num_elements:
            raise ConfigurationError(
                f"N={self.num_elements} is not a perfect square; grid layout impossible"
            )
        for name in ("element_size", "bs_height", "ris_height", "bs_to_square",
                     "bs_ris_horizontal"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.square_side < 0 or self.ris_offset < 0:
            raise ConfigurationError("square_side and ris_offset must be non-negative")
        if self.ris_offset >= self.bs_ris_horizontal:
            raise ConfigurationError("ris_offset must be smaller than bs_ris_horizontal")


@dataclass(frozen=True)
class ScenarioGeometry:
    bs_position: Position3
    ris_center: Position3
    ris_element_positions: np.ndarray  # (N, 3)
    user_positions: np.ndarray  # (K, 3)
    num_bs_antennas: int
    element_size: float

    @property
    def num_users(self) -> int:
        return self.user_positions.shape[0]

    @property
    def num_elements(self) -> int:
        return self.ris_element_positions.shape[0]

    def direct_distances(self) -> np.ndarray:
        """BS-user distances ``d_k``, shape (K,)."""
        return np.linalg.norm(self.user_positions - self.bs_position.asarray(), axis=1)

    def bs_element_distances(self) -> np.ndarray:
        """BS-element distances ``l_n``, shape (N,)."""
        return np.linalg.norm(self.ris_element_positions - self.bs_position.asarray(), axis=1)

    def element_user_distances(self) -> np.ndarray:
        """Element-user distances ``l_{n,k}``, shape (K, N)."""
        diff = self.user_positions[:, None, :] - self.ris_element_positions[None, :, :]
        return np.linalg.norm(diff, axis=2)

    def center_distances(self) -> tuple[float, np.ndarray]:
        """BS-center distance and center-user distances (K,)."""
        c = self.ris_center.asarray()
        l0 = float(np.linalg.norm(c - self.bs_position.asarray()))
        lk = np.linalg.norm(self.user_positions - c, axis=1)
        return l0, lk


@dataclass(frozen=True)
class PathLossParams:
    G: float = 10 ** (-4.3)
    G_prime: float = 10 ** (-4.3)
    alpha: float = 2.0

    def __post_init__(self):
        if not (self.G > 0 and self.G_prime > 0 and self.alpha >= 0):
            raise ConfigurationError("path loss requires G > 0, G' > 0, alpha >= 0")

    @classmethod
    def from_db(cls, G_dB: float, G_prime_dB: float, alpha: float) -> "PathLossParams":
        return cls(10 ** (G_dB / 10), 10 ** (G_prime_dB / 10), alpha)


@dataclass(frozen=True)
class SvFadingParams:
    """Saleh-Valenzuela parameters in symbol units.

    Rates are arrivals per symbol, decays are e-folding times in symbols.
    """

    cluster_rate: float = 0.25
    ray_rate: float = 1.0
    cluster_decay: float = 4.0
    ray_decay: float = 2.0
    num_paths: int = 20

    def __post_init__(self):
        for name in ("cluster_rate", "ray_rate", "cluster_decay", "ray_decay"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.num_paths < 1:
            raise ConfigurationError("num_paths (L) must be >= 1")


@dataclass(frozen=True)
class TapDelayLine:
    delays: np.ndarray  # int, strictly increasing
    gains: np.ndarray  # complex

    def __post_init__(self):
        d = np.asarray(self.delays)
        if d.ndim != 1 or d.size == 0 or d.size != np.asarray(self.gains).size:
            raise ValueError("tap delay line needs matching, non-empty delays and gains")
        if np.any(d < 0) or np.any(np.diff(d) <= 0):
            raise ValueError("delay bins must be non-negative and strictly increasing")
        if not np.all(np.isfinite(self.gains)):
            raise ValueError("tap gains must be finite")

    @property
    def taps(self) -> list[tuple[int, complex]]:
        return [(int(b), complex(g)) for b, g in zip(self.delays, self.gains)]

    def scaled(self, c: float) -> "TapDelayLine":
        return TapDelayLine(self.delays.copy(), self.gains * c)

    def dense(self, length: int | None = None) -> np.ndarray:
        n = int(self.delays[-1]) + 1 if length is None else length
        out = np.zeros(n, dtype=complex)
        keep = self.delays < n
        out[self.delays[keep]] = self.gains[keep]
        return out


@dataclass(frozen=True)
class ChannelSet:
    """Direct lines (K) plus single-tap reflected entries (K x N).

    ``reflected_delays`` are offsets in symbols after the direct peak of the
    same user, so a reflected tap can never land on the peak sample.
    """

    direct: tuple[TapDelayLine, ...]
    reflected_gains: np.ndarray  # (K, N) complex, no phase-shift factor
    reflected_delays: np.ndarray  # (K, N) int >= 1
    T: float = 1e-3

    def __post_init__(self):
        if self.reflected_gains.shape != self.reflected_delays.shape:
            raise ValueError("reflected gains/delays shape mismatch")
        if self.reflected_gains.shape[0] != len(self.direct):
            raise ValueError("one direct line per user is required")
        if np.any(self.reflected_delays < 1):
            raise ValueError("reflected delay offsets must be >= 1")

    @property
    def num_users(self) -> int:
        return len(self.direct)

    @property
    def num_elements(self) -> int:
        return self.reflected_gains.shape[1]

    def without_ris(self) -> "ChannelSet":
        return ChannelSet(self.direct, np.zeros_like(self.reflected_gains),
                          self.reflected_delays, self.T)

    def scaled(self, factors) -> "ChannelSet":
        """Scale user k's direct and reflected gains by ``factors[k]``."""
        f = np.broadcast_to(np.asarray(factors, dtype=float), (self.num_users,))
        direct = tuple(line.scaled(c) for line, c in zip(self.direct, f))
        return ChannelSet(direct, self.reflected_gains * f[:, None],
                          self.reflected_delays, self.T)


def _spawn(rng: np.random.Generator) -> np.random.SeedSequence:
    # fixed consumption from the parent stream, whatever the caller does next
    return np.random.SeedSequence(int(rng.integers(0, 2**63)))


def _child(ss: np.random.SeedSequence, *key: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + key)
    )


def build_geometry(config: ScenarioConfig, rng: np.random.Generator) -> ScenarioGeometry:
    """Place BS, RIS grid and K users.

    The BS sits at the origin at height ``bs_height``; the user square is
    centered ``bs_to_square`` meters away along +x.  The RIS plane is
    parallel to x at ``y = sqrt(bs_ris_horizontal**2 - ris_offset**2)`` so
    that its center is ``ris_offset`` from the BS projection onto the
    plane and ``bs_ris_horizontal`` from the BS horizontally.
    """
    config.validate()
    K, N, a = config.num_users, config.num_elements, config.element_size
    bs = Position3(0.0, 0.0, config.bs_height)

    y_ris = math.sqrt(config.bs_ris_horizontal ** 2 - config.ris_offset ** 2)
    center = Position3(config.ris_offset, y_ris, config.ris_height)
    if config.grid:
        side = math.isqrt(N)
        idx = np.arange(side) - (side - 1) / 2
        gx, gz = np.meshgrid(idx * a, idx * a, indexing="ij")
        offsets = np.stack([gx.ravel(), np.zeros(N), gz.ravel()], axis=1)
    else:
        idx = (np.arange(N) - (N - 1) / 2) * a
        offsets = np.stack([idx, np.zeros(N), np.zeros(N)], axis=1)
    elements = center.asarray() + offsets

    half = config.square_side / 2
    u = rng.uniform(-half, half, size=(K, 2))
    users = np.column_stack([config.bs_to_square + u[:, 0], u[:, 1], np.zeros(K)])

    geom = ScenarioGeometry(bs, center, elements, users, config.num_bs_antennas, a)
    l_n = geom.bs_element_distances()
    l_nk = geom.element_user_distances()
    if np.any(geom.direct_distances() <= 0) or np.any(l_n <= 0) or np.any(l_nk <= 0):
        raise ConfigurationError("all link distances must be strictly positive")
    if min(l_n.min(), l_nk.min()) < 10 * a * math.sqrt(N):
        warnings.warn("RIS far-field condition violated; path-loss approximation is coarse",
                      stacklevel=2)
    return geom


def path_loss_direct(d, p: PathLossParams):
    """``G * d**-alpha``."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = p.G * d ** (-p.alpha)
    return float(out) if out.ndim == 0 else out


def path_loss_reflected(l_n, l_nk, p: PathLossParams):
    """``G' * (l_n * l_nk)**-alpha`` (product-distance law)."""
    l_n = np.asarray(l_n, dtype=float)
    l_nk = np.asarray(l_nk, dtype=float)
    if np.any(l_n <= 0) or np.any(l_nk <= 0):
        raise ValueError("distance must be positive")
    out = p.G_prime * (l_n * l_nk) ** (-p.alpha)
    return float(out) if out.ndim == 0 else out


def reflected_path_losses(geom: ScenarioGeometry, p: PathLossParams,
                          far_field: bool = True) -> np.ndarray:
    """Per (user, element) reflected path loss, shape (K, N).

    With ``far_field`` every element uses the path loss through the RIS
    center.
    """
    if far_field:
        l0, lk = geom.center_distances()
        beta = path_loss_reflected(l0, lk, p)
        return np.repeat(np.atleast_1d(beta)[:, None], geom.num_elements, axis=1)
    return path_loss_reflected(geom.bs_element_distances()[None, :],
                               geom.element_user_distances(), p)


def _sv_rays(params: SvFadingParams, ss: np.random.SeedSequence, fading: bool = True):
    """L earliest rays of the clustered arrival process, in arrival order.

    Returns continuous arrival times (symbols, first ray at 0) and raw ray
    amplitudes with variance ``exp(-T_c/cluster_decay - tau/ray_decay)``.
    Every cluster draws from its own stream in fixed-size chunks, so for a
    given seed the first L rays do not depend on how many are requested.
    """
    L = params.num_paths
    chunk = 32
    heap: list[tuple[float, int]] = []  # max-heap (negated) of the L earliest
    rays: list[tuple[float, float, complex]] = []
    cluster_rng = _child(ss, 0)
    cluster_gaps: list[float] = []
    T_c, c = 0.0, 0
    while not (len(heap) == L and T_c >= -heap[0][0]):
        rng = _child(ss, 1, c)
        tau, i = 0.0, 0
        while True:
            if i % chunk == 0:
                gaps = rng.exponential(1 / params.ray_rate, chunk)
                draws = rng.standard_normal((chunk, 2))
            if i > 0:
                tau += gaps[i % chunk]
            t = T_c + tau
            if len(heap) == L and t >= -heap[0][0]:
                break
            w = math.exp(-T_c / params.cluster_decay - tau / params.ray_decay)
            zi = complex(draws[i % chunk, 0], draws[i % chunk, 1]) / math.sqrt(2)
            rays.append((t, w, zi))
            item = (-t, len(rays) - 1)
            if len(heap) < L:
                heapq.heappush(heap, item)
            else:
                heapq.heappushpop(heap, item)
            i += 1
        c += 1
        if not cluster_gaps:
            cluster_gaps = list(cluster_rng.exponential(1 / params.cluster_rate, chunk))[::-1]
        T_c += cluster_gaps.pop()
    keep = sorted(idx for _, idx in heap)
    keep.sort(key=lambda j: rays[j][0])
    t = np.array([rays[j][0] for j in keep])
    w = np.array([rays[j][1] for j in keep])
    z = np.array([rays[j][2] for j in keep]) if fading else np.ones(L, dtype=complex)
    return t, np.sqrt(w) * z


def sample_sv_rays(params: SvFadingParams, rng: np.random.Generator, fading: bool = True):
    """Continuous-time rays ``(arrival_times, amplitudes)`` before binning."""
    return _sv_rays(params, _spawn(rng), fading)


def _bin_rays(times: np.ndarray, amps: np.ndarray) -> TapDelayLine:
    bins = np.floor(times).astype(int)
    bins -= bins.min()
    delays, inv = np.unique(bins, return_inverse=True)
    gains = np.zeros(delays.size, dtype=complex)
    np.add.at(gains, inv, amps)
    power = np.sum(np.abs(gains) ** 2)
    return TapDelayLine(delays, gains / math.sqrt(power))


def sample_sv_taps(params: SvFadingParams, rng: np.random.Generator,
                   fading: bool = True) -> TapDelayLine:
    """Saleh-Valenzuela line on the symbol grid with unit total power.

    Rays landing in the same symbol bin are summed.  With ``fading=False``
    every ray keeps its mean amplitude (real, positive).
    """
    return _bin_rays(*sample_sv_rays(params, rng, fading))


def assemble_channels(geom: ScenarioGeometry, pl: PathLossParams, sv: SvFadingParams,
                      Gamma: float, rng: np.random.Generator, *, T: float = 1e-3,
                      fading: bool = True, far_field: bool = True,
                      ris_delay_scale: float = math.inf) -> ChannelSet:
    """Direct SV lines and per-element reflected taps for every user.

    Reflected fading is a unit-power single path (a uniform random phase);
    without fading it is 1.  Reflected taps sit
    ``max(1, round((l_n + l_nk - d_k) / ris_delay_scale))`` symbols after
    the direct peak; the default scale puts all of them one symbol later.
    """
    if not 0.0 <= Gamma <= 1.0:
        raise ConfigurationError("Gamma must lie in [0, 1]")
    K, N = geom.num_users, geom.num_elements
    ss = _spawn(rng)
    d_k = geom.direct_distances()
    beta_d = path_loss_direct(d_k, pl)
    direct = tuple(
        _bin_rays(*_sv_rays(sv, np.random.SeedSequence(ss.entropy, spawn_key=(0, k)), fading))
        .scaled(math.sqrt(beta_d[k]))
        for k in range(K)
    )

    beta_r = reflected_path_losses(geom, pl, far_field)
    if fading:
        phases = np.stack([_child(ss, 1, k).uniform(0, 2 * np.pi, N) for k in range(K)])
        h = np.exp(1j * phases)
    else:
        h = np.ones((K, N), dtype=complex)
    gains = np.sqrt(beta_r) * Gamma * h

    if math.isinf(ris_delay_scale):
        delays = np.ones((K, N), dtype=int)
    else:
        excess = (geom.bs_element_distances()[None, :] + geom.element_user_distances()
                  - d_k[:, None])
        delays = np.maximum(1, np.round(excess / ris_delay_scale)).astype(int)
    return ChannelSet(direct, gains, delays, T)


def random_channel_set(K: int, N: int, L: int, rng: np.random.Generator, *,
                       ris_scale: float = 1.0, max_ris_delay: int = 4,
                       sv: SvFadingParams | None = None) -> ChannelSet:
    """Geometry-free random instance for identity and optimizer checks.

    Direct lines are unit-power SV lines; reflected gains are CN(0, 1)
    scaled by ``ris_scale / sqrt(N)`` with delay offsets in
    ``1..max_ris_delay``.
    """
    sv = sv or SvFadingParams()
    sv = SvFadingParams(sv.cluster_rate, sv.ray_rate, sv.cluster_decay, sv.ray_decay, L)
    direct = tuple(sample_sv_taps(sv, rng) for _ in range(K))
    z = rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))
    gains = z * (ris_scale / math.sqrt(2 * N))
    delays = rng.integers(1, max_ris_delay + 1, size=(K, N))
    return ChannelSet(direct, gains, delays, 1e-3)
