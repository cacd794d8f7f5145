"""Doubly-selective channel generation and its banded time-domain form.

The physical channel is a sum of paths, each with a complex gain, a delay in
sampling units (possibly fractional), and a Doppler shift in Doppler-bin
units (possibly fractional). Within a frame of M x N samples the block-n
channel matrix H_n is lower banded with bandwidth l_max + 1; its non-zero
entries are reconstructed from the paths by sinc interpolation across delay
taps and a per-sample Doppler phase ramp.

Several paths may share one delay; fractional delays spill energy onto
neighbouring integer taps and anything past l_max is dropped, so keep
fractional delays at least ~1.5 taps away from the band edges (see
truncation_energy_fraction).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .frame import FrameGeometry, TimeSignal
from .numeric import complex_gaussian, sinc

SPEED_OF_LIGHT = 299792458.0


@dataclass(frozen=True)
class DelayProfile:
    """Named power-delay profile: per-path delays (ns) and mean powers (dB)."""

    name: str
    delays_ns: np.ndarray
    powers_db: np.ndarray

    def delay_taps(self, sample_period_s: float, *, integer: bool = True,
                   scale_to: float | None = None) -> np.ndarray:
        """Per-path delays in sampling units.

        scale_to stretches the profile so its largest delay lands on that tap
        (used by the desk-scale preset, where the physical profile would span
        only a couple of taps).
        """
        if scale_to is not None:
            taps = self.delays_ns / self.delays_ns.max() * scale_to
        else:
            taps = self.delays_ns * 1e-9 / sample_period_s
        return np.round(taps) if integer else taps

    def mean_powers(self) -> np.ndarray:
        """Linear per-path powers normalized to sum to 1."""
        p = 10.0 ** (self.powers_db / 10.0)
        return p / p.sum()


def load_profile(name: str) -> DelayProfile:
    raw = json.loads(resources.files("zpotfs.data").joinpath("profiles.json").read_text())
    if name not in raw:
        raise ValueError(f"unknown channel profile {name!r}; available: {sorted(raw)}")
    entry = raw[name]
    return DelayProfile(
        name=name,
        delays_ns=np.asarray(entry["delays_ns"], dtype=np.float64),
        powers_db=np.asarray(entry["powers_db"], dtype=np.float64),
    )


@dataclass(frozen=True)
class ChannelPath:
    """One propagation path: complex gain, delay in sampling units, Doppler
    in Doppler-bin units."""

    gain: complex
    delay_taps: float
    doppler_taps: float


@dataclass
class ChannelRealization:
    """A drawn set of paths plus the geometry they were drawn for."""

    geometry: FrameGeometry
    paths: list[ChannelPath]
    k_max: float

    @property
    def path_count(self) -> int:
        return len(self.paths)

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=np.complex128)

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay_taps for p in self.paths], dtype=np.float64)

    @property
    def dopplers(self) -> np.ndarray:
        return np.array([p.doppler_taps for p in self.paths], dtype=np.float64)

    def to_csv(self) -> str:
        """One path per line: gain_re,gain_im,delay_taps,doppler_taps."""
        buf = io.StringIO()
        buf.write("gain_re,gain_im,delay_taps,doppler_taps\n")
        for p in self.paths:
            buf.write(f"{p.gain.real!r},{p.gain.imag!r},{p.delay_taps!r},{p.doppler_taps!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, geometry: FrameGeometry, k_max: float) -> "ChannelRealization":
        paths = []
        lines = [ln for ln in text.strip().splitlines() if ln and not ln.startswith("gain_re")]
        for ln in lines:
            re_, im_, d, k = (float(tok) for tok in ln.split(","))
            paths.append(ChannelPath(gain=complex(re_, im_), delay_taps=d, doppler_taps=k))
        return cls(geometry=geometry, paths=paths, k_max=k_max)


def max_doppler_taps(geometry: FrameGeometry, speed_kmh: float, carrier_hz: float | None = None) -> float:
    """Largest Doppler shift in Doppler-bin units for a given UE speed."""
    carrier = geometry.carrier_hz if carrier_hz is None else carrier_hz
    doppler_hz = carrier * (speed_kmh / 3.6) / SPEED_OF_LIGHT
    return doppler_hz / (geometry.delta_f / geometry.n)


def required_l_max(profile: DelayProfile, geometry: FrameGeometry) -> int:
    """Largest integer delay tap the profile needs at this sampling rate."""
    return int(round(profile.delays_ns.max() * 1e-9 / geometry.sample_period))


def generate_channel(
    profile: DelayProfile,
    speed_kmh: float,
    geometry: FrameGeometry,
    rng: np.random.Generator,
    *,
    carrier_hz: float | None = None,
    integer_delays: bool = True,
    scale_to_taps: float | None = None,
) -> ChannelRealization:
    """Draw one channel realization.

    Per-path gains are complex Gaussian with the profile's mean powers
    (normalized to unit total average power); per-path Doppler taps are
    uniform on (-k_max, k_max).
    """
    taps = profile.delay_taps(geometry.sample_period, integer=integer_delays, scale_to=scale_to_taps)
    if taps.max() > geometry.l_max:
        raise ValueError(
            f"profile {profile.name!r} spans tap {taps.max():.2f}, beyond l_max={geometry.l_max}"
        )
    powers = profile.mean_powers()
    k_max = max_doppler_taps(geometry, speed_kmh, carrier_hz)
    gains = complex_gaussian(rng, len(taps), 1.0) * np.sqrt(powers)
    dopplers = rng.uniform(-k_max, k_max, size=len(taps)) if k_max > 0 else np.zeros(len(taps))
    paths = [ChannelPath(g, d, k) for g, d, k in zip(gains, taps, dopplers)]
    return ChannelRealization(geometry=geometry, paths=paths, k_max=k_max)


def delay_time_response(chan: ChannelRealization, l: int, n_abs) -> np.ndarray | complex:
    """Discrete delay-time response h_e(l, n) at absolute sample index n.

    Scalar reference route: a plain sum over paths of
    gain * exp(2j*pi*doppler*(n - delay)/(NM)) * sinc(l - delay).
    The banded builder below must agree with this entrywise.
    """
    g = chan.geometry
    nm = g.m * g.n
    n_abs = np.asarray(n_abs, dtype=np.float64)
    out = np.zeros(n_abs.shape, dtype=np.complex128)
    for p in chan.paths:
        out += p.gain * np.exp(2j * np.pi * p.doppler_taps * (n_abs - p.delay_taps) / nm) * sinc(
            l - p.delay_taps
        )
    return out if out.shape else complex(out)


@dataclass
class BlockChannelSet:
    """The N banded block matrices, stored as their band taps.

    taps[n, m, l] is the entry of H_n at (row m, column m - l); entries with
    l > m are structurally zero. noise_var is the per-sample complex noise
    variance used when the set is applied to a signal.
    """

    geometry: FrameGeometry
    taps: np.ndarray  # (N, M, l_max + 1) complex
    noise_var: float

    def dense_block(self, n: int) -> np.ndarray:
        """Assemble H_n as a dense M x M matrix (test/oracle use only)."""
        g = self.geometry
        h = np.zeros((g.m, g.m), dtype=np.complex128)
        for l in range(g.l_max + 1):
            rows = np.arange(l, g.m)
            h[rows, rows - l] = self.taps[n, rows, l]
        return h


def build_block_channels(chan: ChannelRealization, noise_var: float) -> BlockChannelSet:
    """Populate the band taps for every (block, row, tap).

    Built per path as an outer product of a per-block Doppler phase, a
    per-row phase ramp, and a sinc delay-interpolation kernel; agrees with
    delay_time_response evaluated at absolute sample index n*M + m.
    """
    g = chan.geometry
    n_idx = np.arange(g.n)
    m_idx = np.arange(g.m)
    l_idx = np.arange(g.l_max + 1)
    taps = np.zeros((g.n, g.m, g.l_max + 1), dtype=np.complex128)
    nm = g.m * g.n
    for p in chan.paths:
        block_phase = np.exp(2j * np.pi * p.doppler_taps * n_idx / g.n)
        row_phase = np.exp(2j * np.pi * p.doppler_taps * (m_idx - p.delay_taps) / nm)
        kernel = sinc(l_idx - p.delay_taps)
        taps += p.gain * block_phase[:, None, None] * row_phase[None, :, None] * kernel[None, None, :]
    # Row m has no column m - l for l > m: zero the structural corner.
    corner = l_idx[None, :] > m_idx[:, None]
    taps[:, corner] = 0.0
    return BlockChannelSet(geometry=g, taps=taps, noise_var=noise_var)


def truncation_energy_fraction(chan: ChannelRealization) -> float:
    """Fraction of channel energy lost to dropping sinc taps outside 0..l_max.

    The shifted-sinc kernel carries unit energy over all integer taps, so the
    discarded fraction per path is 1 - sum(sinc^2) over the kept taps,
    weighted by realized path powers.
    """
    g = chan.geometry
    l_idx = np.arange(g.l_max + 1)
    weights = np.abs(chan.gains) ** 2
    kept = np.array([np.sum(sinc(l_idx - p.delay_taps) ** 2) for p in chan.paths])
    return float(np.sum(weights * (1.0 - kept)) / np.sum(weights))


@dataclass(frozen=True)
class SubChannel:
    """The channel window touching one signal layer.

    matrix has l_max + 1 rows (received samples m .. m + l_max) and
    target_col + l_max + 1 columns (transmit layers base_col .. m + l_max);
    the target layer sits in column target_col.
    """

    matrix: np.ndarray
    target_col: int
    base_col: int


def extract_subchannel(blocks: BlockChannelSet, n: int, m: int) -> SubChannel:
    g = blocks.geometry
    if not 0 <= m <= g.m - g.l_max - 1:
        raise ValueError(f"layer m={m} outside the data region [0, {g.m - g.l_max - 1}]")
    l_prime = min(m, g.l_max)
    m_prime = m - l_prime
    ncols = l_prime + g.l_max + 1
    r = np.arange(g.l_max + 1)
    c = np.arange(ncols)
    tap = r[:, None] - c[None, :] + l_prime
    valid = (tap >= 0) & (tap <= g.l_max)
    mat = np.zeros((g.l_max + 1, ncols), dtype=np.complex128)
    rows = m + r
    mat[valid] = blocks.taps[n, rows[:, None].repeat(ncols, axis=1)[valid], tap[valid]]
    return SubChannel(matrix=mat, target_col=l_prime, base_col=m_prime)


def apply_channel(signal: TimeSignal, blocks: BlockChannelSet, rng: np.random.Generator) -> TimeSignal:
    """r_n = H_n s_n + z_n with i.i.d. complex Gaussian noise."""
    g = blocks.geometry
    s = signal.blocks
    r = np.zeros_like(s)
    for l in range(g.l_max + 1):
        r[:, l:] += blocks.taps[:, l:, l] * s[:, : g.m - l]
    if blocks.noise_var > 0:
        r = r + complex_gaussian(rng, r.shape, blocks.noise_var)
    return TimeSignal.from_blocks(g, r)


@dataclass(frozen=True)
class CsiErrorModel:
    """Receiver-side estimation error: complex Gaussian on per-path gains
    (sigma_h2) and real Gaussian on per-path Doppler taps (sigma_k2)."""

    sigma_h2: float = 0.0
    sigma_k2: float = 0.0

    def __post_init__(self):
        if self.sigma_h2 < 0 or self.sigma_k2 < 0:
            raise ValueError("CSI error variances must be non-negative")


def perturb_paths(chan: ChannelRealization, model: CsiErrorModel,
                  rng: np.random.Generator) -> ChannelRealization:
    """The channel the receiver believes in: gains and Doppler taps perturbed,
    delays assumed known."""
    gains = chan.gains + (
        complex_gaussian(rng, chan.path_count, model.sigma_h2) if model.sigma_h2 > 0 else 0.0
    )
    dopplers = chan.dopplers + (
        rng.normal(0.0, np.sqrt(model.sigma_k2), size=chan.path_count)
        if model.sigma_k2 > 0
        else 0.0
    )
    paths = [
        ChannelPath(g, d, k) for g, d, k in zip(np.atleast_1d(gains), chan.delays, np.atleast_1d(dopplers))
    ]
    return ChannelRealization(geometry=chan.geometry, paths=paths, k_max=chan.k_max)


def perturb_csi(chan: ChannelRealization, model: CsiErrorModel, noise_var: float,
                rng: np.random.Generator) -> BlockChannelSet:
    """Block matrices regenerated from the perturbed path parameters."""
    return build_block_channels(perturb_paths(chan, model, rng), noise_var)
