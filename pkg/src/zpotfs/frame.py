"""Delay-Doppler frame layout and the transforms linking it to the time domain.

A frame is an M x N complex grid: delay along rows (fast dimension), Doppler
along columns. The last `l_max` rows are forced to zero so that after the
channel the N time-domain blocks stay mutually non-interfering. Indexing is
0-based throughout.

The live transmit path is the per-row N-point IDFT (inverse discrete Zak
transform); the ISFFT + rectangular-pulse multicarrier chain is kept only as
a cross-check since the two coincide for rectangular pulses.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .numeric import dft_matrix

FRAME_MAGIC = b"ZPOTFS-DDFRAME\x00\x01"  # 16 bytes, followed by little-endian fields


@dataclass(frozen=True)
class FrameGeometry:
    """Grid dimensions and timing for one frame.

    m: delay bins (subcarriers); n: Doppler bins (time slots);
    l_max: zero-padding length in delay taps; delta_f: subcarrier spacing (Hz).
    """

    m: int
    n: int
    l_max: int
    delta_f: float = 15e3
    carrier_hz: float = 4e9

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"invalid grid {self.m}x{self.n}")
        if not 0 < self.l_max < self.m:
            raise ValueError(f"l_max={self.l_max} must satisfy 0 < l_max < M={self.m}")
        if self.delta_f <= 0:
            raise ValueError("delta_f must be positive")

    @property
    def symbol_period(self) -> float:
        return 1.0 / self.delta_f

    @property
    def sample_period(self) -> float:
        """Delay resolution T/M."""
        return self.symbol_period / self.m

    @property
    def data_rows(self) -> int:
        """Number of delay rows carrying data (the rest are zero padding)."""
        return self.m - self.l_max

    @property
    def frame_bits(self) -> int:
        """Data symbols per frame; multiply by bits/symbol for the bit budget."""
        return self.data_rows * self.n


class DDFrame:
    """Delay-Doppler symbol grid with the zero-padding rows pinned to zero."""

    def __init__(self, geometry: FrameGeometry, grid: np.ndarray):
        grid = np.asarray(grid, dtype=np.complex128)
        if grid.shape != (geometry.m, geometry.n):
            raise ValueError(f"grid shape {grid.shape} != ({geometry.m}, {geometry.n})")
        if np.any(grid[geometry.m - geometry.l_max :, :] != 0):
            raise ValueError("zero-padding rows must be exactly zero")
        self.geometry = geometry
        self.grid = grid

    @classmethod
    def from_data(cls, geometry: FrameGeometry, data: np.ndarray) -> "DDFrame":
        """Build a frame from a (M - l_max) x N block of data symbols."""
        data = np.asarray(data, dtype=np.complex128)
        if data.shape != (geometry.data_rows, geometry.n):
            raise ValueError(f"data shape {data.shape} != ({geometry.data_rows}, {geometry.n})")
        grid = np.zeros((geometry.m, geometry.n), dtype=np.complex128)
        grid[: geometry.data_rows, :] = data
        return cls(geometry, grid)

    @classmethod
    def random(cls, geometry: FrameGeometry, constellation, rng) -> tuple["DDFrame", np.ndarray]:
        """Random data frame; returns (frame, transmitted bits)."""
        k = constellation.bits_per_symbol
        bits = rng.integers(0, 2, size=geometry.data_rows * geometry.n * k)
        data = constellation.map_bits(bits).reshape(geometry.data_rows, geometry.n)
        return cls.from_data(geometry, data), bits

    def data(self) -> np.ndarray:
        return self.grid[: self.geometry.data_rows, :]

    def dump(self) -> bytes:
        """Binary serialization: magic, little-endian uint32 (M, N, l_max),
        then the row-major complex128 grid (little-endian float64 pairs)."""
        header = FRAME_MAGIC + struct.pack("<III", self.geometry.m, self.geometry.n, self.geometry.l_max)
        body = np.ascontiguousarray(self.grid).astype("<c16").tobytes()
        return header + body

    @classmethod
    def load(cls, blob: bytes, delta_f: float = 15e3, carrier_hz: float = 4e9) -> "DDFrame":
        if blob[:16] != FRAME_MAGIC:
            raise ValueError("bad frame magic")
        m, n, l_max = struct.unpack("<III", blob[16:28])
        grid = np.frombuffer(blob[28:], dtype="<c16").reshape(m, n)
        geom = FrameGeometry(m=m, n=n, l_max=l_max, delta_f=delta_f, carrier_hz=carrier_hz)
        return cls(geom, grid.astype(np.complex128))


class TimeSignal:
    """Length-MN time-domain signal with a (block, sample) view.

    Block n holds samples n*M .. n*M + M - 1; at transmit the last l_max
    samples of every block are zero (the zero-padding rows).
    """

    def __init__(self, geometry: FrameGeometry, samples: np.ndarray):
        samples = np.asarray(samples, dtype=np.complex128)
        if samples.shape != (geometry.m * geometry.n,):
            raise ValueError(f"expected {geometry.m * geometry.n} samples, got {samples.shape}")
        self.geometry = geometry
        self.samples = samples

    @property
    def blocks(self) -> np.ndarray:
        """(N, M) view: row n is transmitted block n."""
        return self.samples.reshape(self.geometry.n, self.geometry.m)

    @classmethod
    def from_blocks(cls, geometry: FrameGeometry, blocks: np.ndarray) -> "TimeSignal":
        return cls(geometry, np.asarray(blocks).reshape(-1))


def idzt_transmit(frame: DDFrame) -> TimeSignal:
    """Per-delay-row N-point IDFT, stacked column-major: block n is column n
    of grid @ F_N^H."""
    x = np.fft.ifft(frame.grid, axis=1, norm="ortho")
    # vec() stacks columns; column n of the M x N result is block n.
    return TimeSignal(frame.geometry, x.T.reshape(-1))


def dzt_receive(signal: TimeSignal) -> np.ndarray:
    """Inverse of idzt_transmit: per-row N-point DFT back to the DD grid."""
    x = signal.blocks.T  # (M, N)
    return np.fft.fft(x, axis=1, norm="ortho")


def isfft_heisenberg_transmit(frame: DDFrame) -> TimeSignal:
    """Reference transmit chain: ISFFT to the time-frequency grid, then a
    rectangular-pulse multicarrier modulator (an M-point IDFT per column).

    Used only as a cross-check oracle against idzt_transmit; built from dense
    DFT matrices on purpose so it shares no code with the live path.
    """
    g = frame.geometry
    f_m = dft_matrix(g.m)
    f_n = dft_matrix(g.n)
    x_tf = f_m @ frame.grid @ f_n.conj().T
    s_mat = f_m.conj().T @ x_tf  # identity pulse-shaping matrix
    return TimeSignal(g, s_mat.T.reshape(-1))


def layer_to_dd(est: np.ndarray, variances: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Take one delay layer's per-block estimates to the DD domain.

    The observation vector is DFT'd; the per-entry variances pass through
    unchanged since the transform is unitary and only diagonals are tracked.
    """
    est = np.asarray(est)
    return np.fft.fft(est, axis=-1, norm="ortho"), np.asarray(variances)


def dd_to_layer(dd_syms: np.ndarray, dd_var: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return a DD-domain layer to the time domain.

    Means go through the IDFT. For a diagonal DD covariance the conjugated
    covariance F^H diag(v) F has a constant diagonal equal to mean(v); the
    off-diagonal terms are dropped, so the time variance is that mean
    replicated across the layer.
    """
    dd_syms = np.asarray(dd_syms)
    dd_var = np.asarray(dd_var, dtype=np.float64)
    time_est = np.fft.ifft(dd_syms, axis=-1, norm="ortho")
    time_var = np.broadcast_to(dd_var.mean(axis=-1, keepdims=True), dd_var.shape).copy()
    return time_est, time_var
