"""Joint detection and decoding: LLR extraction, interleaving, soft-symbol
feedback, and the outer turbo loop.

Per outer iteration the detector produces DD observations and variances,
bit LLRs are extracted (positive favours bit 0), the a-priori part is
subtracted off, the result is de-interleaved and decoded, and the decoder's
full posterior is fed back through the interleaver. The fed-back LLRs become
soft symbol priors (mean and variance) for the next detection pass; symbols
whose bits did not fill a codeword stay uncoded and feed back the detector's
own DD posteriors instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detectors import ComplexityCounter, DetectorConfig, detect_batch
from .ldpc import LLR_CLAMP, LdpcCode
from .numeric import Constellation


def llr_from_dd(dd_obs: np.ndarray, dd_var: np.ndarray, constellation: Constellation,
                max_log: bool = False, clamp: float = LLR_CLAMP) -> np.ndarray:
    """Per-bit LLRs log Pr(bit=0)/Pr(bit=1) from Gaussian DD observations.

    Output shape is dd_obs.shape + (bits_per_symbol,). The exact form uses a
    log-sum-exp over each bit's symbol subsets; max_log keeps only the best
    symbol per subset.
    """
    y = np.asarray(dd_obs, dtype=np.complex128)
    v = np.maximum(np.asarray(dd_var, dtype=np.float64), 1e-30)
    pts = constellation.points
    logits = -np.abs(y[..., None] - pts) ** 2 / v[..., None]
    masks = constellation.bit_masks()  # (k, |Q|), True where bit = 1
    out = np.empty(y.shape + (constellation.bits_per_symbol,))
    for p, mask in enumerate(masks):
        l0 = logits[..., ~mask]
        l1 = logits[..., mask]
        if max_log:
            out[..., p] = l0.max(axis=-1) - l1.max(axis=-1)
        else:
            ref = logits.max(axis=-1)
            s0 = np.log(np.exp(l0 - ref[..., None]).sum(axis=-1))
            s1 = np.log(np.exp(l1 - ref[..., None]).sum(axis=-1))
            out[..., p] = s0 - s1
    return np.clip(out, -clamp, clamp)


def extrinsic(l_out: np.ndarray, l_a: np.ndarray) -> np.ndarray:
    """Remove the a-priori part from detector-output LLRs."""
    l_out = np.asarray(l_out)
    l_a = np.asarray(l_a)
    if l_out.shape != l_a.shape:
        raise ValueError(f"LLR shape mismatch {l_out.shape} vs {l_a.shape}")
    return l_out - l_a


def soft_symbols_from_llr(l_a: np.ndarray, constellation: Constellation,
                          es: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Soft symbol means and variances from per-bit LLRs.

    l_a has shape (..., bits_per_symbol). Each constellation point is
    weighted by the product of its bits' probabilities, Pr(bit=0) =
    (1 + tanh(L/2))/2 under the log Pr(0)/Pr(1) convention; weights sum to
    one by construction.
    """
    l_a = np.asarray(l_a, dtype=np.float64)
    k = constellation.bits_per_symbol
    if l_a.shape[-1] != k:
        raise ValueError(f"expected {k} LLRs per symbol, got {l_a.shape[-1]}")
    t = np.tanh(0.5 * np.clip(l_a, -LLR_CLAMP, LLR_CLAMP))
    labels = constellation.labels  # (|Q|, k) of {0, 1}
    sign = 1.0 - 2.0 * labels  # +1 when the labeled bit is 0
    weights = np.prod(0.5 * (1.0 + t[..., None, :] * sign), axis=-1)
    mean = weights @ constellation.points
    var = np.maximum(weights @ (np.abs(constellation.points) ** 2) - np.abs(mean) ** 2, 0.0)
    return mean, var


@dataclass
class FrameCodingPlan:
    """How one frame's data bits split into codewords plus an uncoded tail.

    perms[f, j] maps codeword j of frame f onto its transmitted positions:
    transmitted[i] = codeword[perms[f, j, i]].
    """

    code: LdpcCode
    n_frames: int
    n_codewords: int
    leftover_bits: int
    perms: np.ndarray
    total_bits: int

    @classmethod
    def build(cls, geometry, constellation: Constellation, code: LdpcCode,
              n_frames: int, seed: int) -> "FrameCodingPlan":
        k = constellation.bits_per_symbol
        if code.n % k != 0:
            raise ValueError(f"code length {code.n} not a multiple of {k} bits/symbol")
        total = geometry.data_rows * geometry.n * k
        n_cw = total // code.n
        if n_cw < 1:
            raise ValueError(f"frame carries {total} bits, fewer than one {code.n}-bit codeword")
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x17eaf)))
        perms = np.stack(
            [
                np.stack([rng.permutation(code.n) for _ in range(n_cw)])
                for _ in range(n_frames)
            ]
        )
        return cls(
            code=code,
            n_frames=n_frames,
            n_codewords=n_cw,
            leftover_bits=total - n_cw * code.n,
            perms=perms,
            total_bits=total,
        )

    @property
    def coded_bits(self) -> int:
        return self.n_codewords * self.code.n

    def encode_frames(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw random info bits and produce per-frame transmitted bits.

        Returns (frame_bits (F, total_bits), info_bits (F, n_cw, k_info)).
        The uncoded tail is filled with fresh random bits.
        """
        f, n_cw, n = self.n_frames, self.n_codewords, self.code.n
        info = rng.integers(0, 2, size=(f, n_cw, self.code.k)).astype(np.uint8)
        frame_bits = np.empty((f, self.total_bits), dtype=np.int64)
        for fi in range(f):
            for j in range(n_cw):
                cw = self.code.encode(info[fi, j])
                frame_bits[fi, j * n : (j + 1) * n] = cw[self.perms[fi, j]]
        if self.leftover_bits:
            frame_bits[:, self.coded_bits :] = rng.integers(
                0, 2, size=(f, self.leftover_bits)
            )
        return frame_bits, info


@dataclass
class TurboResult:
    """Decoded info bits (and coded-region transmitted-bit decisions) after
    each outer iteration, plus aggregate counters."""

    info_bits: list = field(default_factory=list)  # (F, n_cw, k_info) per iteration
    converged: list = field(default_factory=list)  # (F, n_cw) bool per iteration
    counter: ComplexityCounter = field(default_factory=ComplexityCounter)


def turbo_receive(
    rx: np.ndarray,
    taps: np.ndarray,
    noise_var: float,
    plan: FrameCodingPlan,
    det_cfg: DetectorConfig,
    constellation: Constellation,
    turbo_iters: int,
    *,
    k_max: float = 0.0,
    bp_iters: int = 50,
) -> TurboResult:
    """Run the joint detection-decoding loop over a batch of frames."""
    frames = rx.shape[0]
    if frames != plan.n_frames:
        raise ValueError(f"plan built for {plan.n_frames} frames, got {frames}")
    k = constellation.bits_per_symbol
    layers = rx.shape[2] - (taps.shape[-1] - 1)
    n_blocks = rx.shape[1]
    coded_syms = plan.coded_bits // k
    result = TurboResult()

    l_a = np.zeros((frames, plan.coded_bits))
    prior_mean = None
    prior_var = None
    for _ in range(turbo_iters):
        state, counter = detect_batch(
            rx, taps, noise_var, det_cfg, constellation,
            k_max=k_max, prior_mean=prior_mean, prior_var=prior_var,
        )
        result.counter.multiplies += counter.multiplies
        result.counter.weight_computations += counter.weight_computations
        result.counter.solves += counter.solves

        # The filtered DD observation excludes the target symbol's own prior
        # (it only shaped the cancellation of other layers), so the channel
        # LLR combines with the a-priori LLR additively into the detector's
        # intrinsic output; the extrinsic step then hands the decoder exactly
        # the new channel evidence.
        llr_channel = llr_from_dd(state.dd_obs, state.dd_obs_var, constellation)
        l_out = llr_channel.reshape(frames, -1)[:, : plan.coded_bits] + l_a
        l_e = extrinsic(l_out, l_a)

        info_now = np.empty((frames, plan.n_codewords, plan.code.k), dtype=np.uint8)
        conv_now = np.empty((frames, plan.n_codewords), dtype=bool)
        n = plan.code.n
        for fi in range(frames):
            for j in range(plan.n_codewords):
                perm = plan.perms[fi, j]
                l_code = np.empty(n)
                l_code[perm] = l_e[fi, j * n : (j + 1) * n]
                posterior, hard, conv = plan.code.decode(l_code, max_iters=bp_iters)
                info_now[fi, j] = hard[plan.code.info_positions]
                conv_now[fi, j] = conv
                l_a[fi, j * n : (j + 1) * n] = np.clip(posterior[perm], -LLR_CLAMP, LLR_CLAMP)
        result.info_bits.append(info_now)
        result.converged.append(conv_now)

        # Feedback: decoder-informed soft symbols on the coded region,
        # detector posteriors on the uncoded tail.
        sym_mean = state.dd_mean.reshape(frames, -1).copy()
        sym_var = state.dd_var.reshape(frames, -1).copy()
        soft_mean, soft_var = soft_symbols_from_llr(
            l_a.reshape(frames, coded_syms, k), constellation, det_cfg.es
        )
        sym_mean[:, :coded_syms] = soft_mean
        sym_var[:, :coded_syms] = soft_var

        grid_mean = sym_mean.reshape(frames, layers, n_blocks)
        grid_var = sym_var.reshape(frames, layers, n_blocks)
        time_mean = np.fft.ifft(grid_mean, axis=2, norm="ortho")
        time_var = np.broadcast_to(
            grid_var.mean(axis=2, keepdims=True), grid_var.shape
        )
        m_bins = rx.shape[2]
        prior_mean = np.zeros((frames, n_blocks, m_bins), dtype=np.complex128)
        prior_var = np.zeros((frames, n_blocks, m_bins))
        prior_mean[:, :, :layers] = time_mean.transpose(0, 2, 1)
        prior_var[:, :, :layers] = time_var.transpose(0, 2, 1)
    return result
