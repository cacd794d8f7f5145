"""Shared numeric kernels: unitary DFTs, Hermitian positive-definite solves,
Gray-labeled QAM constellations, and seeded complex-Gaussian sampling.

All transforms are unitary (1/sqrt(N) on both directions), so energy is
preserved and covariance diagonals pass through FFT/IFFT unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve


def dft(v: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unitary DFT (or IDFT) of a 1-D vector of any length."""
    v = np.asarray(v)
    if v.size == 0:
        raise ValueError("dft: zero-length input")
    if inverse:
        return np.fft.ifft(v, norm="ortho")
    return np.fft.fft(v, norm="ortho")


def dft_matrix(n: int) -> np.ndarray:
    """Dense unitary DFT matrix F_n with F[k, j] = exp(-2j*pi*k*j/n)/sqrt(n)."""
    if n < 1:
        raise ValueError("dft_matrix: n must be >= 1")
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def sinc(x):
    """Normalized sinc, sin(pi*x)/(pi*x), with sinc(0) = 1."""
    return np.sinc(x)


def hpd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a @ x = b for Hermitian positive-definite a via Cholesky.

    Raises np.linalg.LinAlgError if `a` is not Hermitian positive definite.
    No regularization is applied; callers own any conditioning decisions.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"hpd_solve: expected square matrix, got {a.shape}")
    if not np.allclose(a, a.conj().T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise np.linalg.LinAlgError("hpd_solve: matrix is not Hermitian")
    try:
        c = cho_factor(a, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("hpd_solve: matrix is not positive definite") from exc
    return cho_solve(c, b)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; identical seeds give bit-identical streams."""
    return np.random.default_rng(np.random.SeedSequence(seed))


def fork_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """n statistically independent generators derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def complex_gaussian(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples with E|z|^2 = var."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


# Per-axis Gray labeling for square QAM: bit pair -> amplitude level.
# The first half of a symbol's bits selects the I level, the second half
# the Q level; within an axis the mapping is
#   0 -> +1, 1 -> -1              (one bit per axis, 4QAM)
#   00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3   (two bits per axis, 16QAM)
# so adjacent levels always differ in exactly one bit.
_GRAY_AXIS = {
    1: {(0,): 1.0, (1,): -1.0},
    2: {(0, 0): -3.0, (0, 1): -1.0, (1, 1): 1.0, (1, 0): 3.0},
}


@dataclass(frozen=True)
class Constellation:
    """Gray-labeled unit-energy square QAM constellation.

    points[i] is the symbol whose bit label is the big-endian binary
    expansion of i; labels[i] holds that expansion explicitly.
    """

    order: int
    points: np.ndarray
    labels: np.ndarray  # (order, bits_per_symbol) int array
    energy: float = 1.0

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.order))

    def map_bits(self, bits: np.ndarray) -> np.ndarray:
        """Map a flat bit array (length divisible by bits_per_symbol) to symbols."""
        bits = np.asarray(bits, dtype=np.int64)
        k = self.bits_per_symbol
        if bits.size % k != 0:
            raise ValueError(f"bit count {bits.size} not divisible by {k}")
        groups = bits.reshape(-1, k)
        idx = groups @ (1 << np.arange(k - 1, -1, -1))
        return self.points[idx]

    def hard_indices(self, symbols: np.ndarray) -> np.ndarray:
        """Nearest-point indices; ties break to the lowest index."""
        d = np.abs(np.asarray(symbols)[..., None] - self.points)
        return np.argmin(d, axis=-1)

    def hard_decision(self, symbols: np.ndarray) -> np.ndarray:
        return self.points[self.hard_indices(symbols)]

    def unmap_hard(self, symbols: np.ndarray) -> np.ndarray:
        """Nearest-point decision followed by label lookup; returns flat bits."""
        return self.labels[self.hard_indices(symbols)].reshape(-1)

    def bit_masks(self) -> np.ndarray:
        """masks[p, i] True where bit p of point i equals 1 (for LLR sums)."""
        return self.labels.T.astype(bool)


def qam_constellation(order: int) -> Constellation:
    """Unit-average-energy Gray-labeled QAM for order 4 or 16."""
    if order not in (4, 16):
        raise ValueError(f"unsupported QAM order {order} (use 4 or 16)")
    bits_per_axis = int(np.log2(order)) // 2
    axis = _GRAY_AXIS[bits_per_axis]
    k = 2 * bits_per_axis
    labels = np.array(
        [[(i >> (k - 1 - p)) & 1 for p in range(k)] for i in range(order)], dtype=np.int64
    )
    points = np.empty(order, dtype=np.complex128)
    for i, lab in enumerate(labels):
        re = axis[tuple(lab[:bits_per_axis])]
        im = axis[tuple(lab[bits_per_axis:])]
        points[i] = re + 1j * im
    scale = np.sqrt(np.mean(np.abs(points) ** 2))
    points /= scale
    return Constellation(order=order, points=points, labels=labels)
