"""Cross-domain SIC-MMSE detection for zero-padded OTFS.

Layers (delay positions) are detected sequentially; within a layer the N
blocks of a frame are independent and processed as one batch, as are
multiple frames. Per layer the pipeline is: cancel interference in the time
domain, MMSE-filter the window, normalize, take the layer across blocks to
the DD domain with an N-point FFT, decide (hard nearest point or soft
posterior), and return by IFFT as the prior for subsequent layers.

Modes
-----
hard    nearest-point DD decisions fed back with zero variance
soft    posterior-mean DD decisions fed back with posterior variance
approx  soft pipeline, but exact filter weights are computed only at
        refresh layers and recycled for the next delta_m layers

The recycled-weight output variance always uses the explicit interference
sum (exact weights may use the shortcut formula, which presumes MMSE
optimality). All estimates are normalized by the effective gain mu, so the
variance fed to the DD stage is the normalized one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import BlockChannelSet, SubChannel
from .frame import TimeSignal
from .numeric import Constellation

_DEGENERATE_MU = 1e-12
_MIN_DD_VAR = 1e-30


@dataclass
class DetectorConfig:
    mode: str = "soft"  # "hard" | "soft" | "approx"
    iterations: int = 1
    delta_beta: float | None = None  # MSE tolerance driving the recycling budget
    delta_m: int | None = None  # fixed recycling span (overrides delta_beta)
    bounded_budget: bool = False  # derive the span from the measured-MSE-safe inverse
    es: float = 1.0
    collect_trace: bool = False

    def __post_init__(self):
        if self.mode not in ("hard", "soft", "approx"):
            raise ValueError(f"unknown detector mode {self.mode!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.mode == "approx" and self.delta_m is None:
            if self.delta_beta is None or self.delta_beta <= 0:
                raise ValueError("approx mode needs delta_beta > 0 or an explicit delta_m")


@dataclass
class ComplexityCounter:
    """Operation tallies; all fields only ever grow during a run."""

    multiplies: int = 0
    weight_computations: int = 0
    solves: int = 0

    def add_weights(self, count: int, order: int):
        self.weight_computations += count
        self.solves += count
        self.multiplies += count * order**3

    def add_linear(self, count: int):
        self.multiplies += count


@dataclass
class DetectorTrace:
    """Per-(iteration, layer, block) filter diagnostics.

    sinr_exact_db is filled only in approx mode, from reference weights
    computed on the same state the recycled filter saw; it never feeds back
    into the detection itself.
    """

    iteration: list = field(default_factory=list)
    layer: list = field(default_factory=list)
    mu: list = field(default_factory=list)  # (F, N) arrays
    sigma2_post: list = field(default_factory=list)
    sinr_db: list = field(default_factory=list)
    sinr_exact_db: list = field(default_factory=list)
    refreshed: list = field(default_factory=list)

    def stacked(self):
        return {
            "iteration": np.asarray(self.iteration),
            "layer": np.asarray(self.layer),
            "mu": np.stack(self.mu),
            "sigma2_post": np.stack(self.sigma2_post),
            "sinr_db": np.stack(self.sinr_db),
            "sinr_exact_db": np.stack(self.sinr_exact_db),
            "refreshed": np.asarray(self.refreshed),
        }


@dataclass
class DetectionState:
    """Final per-symbol statistics of a detection run.

    Time-domain arrays are (F, N, M); DD-domain arrays are (F, L, N) with
    L = M - l_max data layers; hard_grid is (F, M, N) with zero-padding rows
    pinned to zero.
    """

    time_mean: np.ndarray
    time_var: np.ndarray
    dd_obs: np.ndarray
    dd_obs_var: np.ndarray
    dd_mean: np.ndarray
    dd_var: np.ndarray
    hard_grid: np.ndarray
    mse_per_iteration: list | None = None  # estimate MSE after each iteration's DD stage
    mse_linear_per_iteration: list | None = None  # filter-output MSE within each iteration
    trace: DetectorTrace | None = None


def mmse_weights(sub: SubChannel, variances: np.ndarray, noise_var: float,
                 es: float = 1.0) -> tuple[np.ndarray, complex]:
    """Filter weights and effective gain for one sub-channel window.

    variances holds the per-column prior variances with the target column set
    to the symbol energy. Solves (H V H^H + noise I) y = h for the target
    column h and returns w = es * y^H (so the gain mu = w @ h lies in (0, 1)
    for any symbol energy), never forming the inverse.
    """
    h_w = sub.matrix
    v = np.asarray(variances, dtype=np.float64)
    if v.shape != (h_w.shape[1],):
        raise ValueError(f"variance vector length {v.shape} != column count {h_w.shape[1]}")
    if np.any(v < 0):
        raise ValueError("negative prior variance")
    a = (h_w * v) @ h_w.conj().T
    k = h_w.shape[0]
    a[np.diag_indices(k)] += noise_var
    h_col = h_w[:, sub.target_col]
    if noise_var == 0.0:
        y = np.linalg.pinv(a) @ h_col  # zero-forcing limit; a may be singular
    else:
        try:
            y = np.linalg.solve(a, h_col)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular MMSE system") from exc
    w = es * y.conj()
    mu = complex(w @ h_col)
    return w, mu


def cancel_interference(r_bar: np.ndarray, sub: SubChannel, current_estimates: np.ndarray,
                        previous_estimates: np.ndarray) -> np.ndarray:
    """Subtract detected-layer estimates (columns before the target) and
    prior-iteration estimates (columns after it) from the received window.

    Estimate vectors are aligned to the window columns; entries at and before
    the target use current_estimates, entries after it previous_estimates.
    First-iteration callers pass zeros.
    """
    h_w = sub.matrix
    lp = sub.target_col
    r_hat = np.asarray(r_bar, dtype=np.complex128).copy()
    for j in range(lp):
        r_hat -= h_w[:, j] * current_estimates[j]
    for kcol in range(lp + 1, h_w.shape[1]):
        r_hat -= h_w[:, kcol] * previous_estimates[kcol]
    return r_hat


def filter_and_normalize(w: np.ndarray, mu: complex, r_hat: np.ndarray,
                         es: float = 1.0) -> tuple[complex, float]:
    """Apply the filter, divide out the effective gain, and report the
    normalized output variance (exact-weight shortcut form)."""
    if abs(mu) < _DEGENERATE_MU:
        raise ValueError("degenerate layer: effective gain is numerically zero")
    s_hat = complex(w @ r_hat) / mu
    sigma2 = es * (mu.real - abs(mu) ** 2) / abs(mu) ** 2
    return s_hat, sigma2


def explicit_output_variance(w: np.ndarray, sub: SubChannel, error_variances: np.ndarray,
                             noise_var: float) -> float:
    """Unnormalized filtered interference-plus-noise variance for arbitrary
    (possibly recycled) weights: sum |w h_j|^2 var_j over non-target columns
    plus ||w||^2 * noise. Divide by |mu|^2 to attach it to the normalized
    estimate."""
    h_w = sub.matrix
    gains = w @ h_w
    var = 0.0
    for c in range(h_w.shape[1]):
        if c == sub.target_col:
            continue
        var += abs(gains[c]) ** 2 * error_variances[c]
    return float(var + np.sum(np.abs(w) ** 2) * noise_var)


def dd_posterior(dd_obs: np.ndarray, dd_var: np.ndarray,
                 constellation: Constellation) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-symbol posterior mean/variance under a Gaussian likelihood
    exp(-|y - a|^2 / V), plus the nearest-point hard decision."""
    y = np.asarray(dd_obs, dtype=np.complex128)
    v = np.maximum(np.asarray(dd_var, dtype=np.float64), _MIN_DD_VAR)
    pts = constellation.points
    d2 = np.abs(y[..., None] - pts) ** 2
    logits = -d2 / v[..., None]
    logits -= logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=-1, keepdims=True)
    mean = p @ pts
    second = p @ (np.abs(pts) ** 2)
    var = np.maximum(second - np.abs(mean) ** 2, 0.0)
    hard = pts[np.argmin(d2, axis=-1)]
    return mean, var, hard


def delta_m(delta_beta: float, nu_max: float, a: float, theta: float,
            m: int, n: int) -> int:
    """Recycling span from the arccos budget formula, floored and clamped
    to at least one layer."""
    if nu_max <= 0:
        raise ValueError("nu_max must be positive")
    if not 0 < delta_beta <= 2 * a:
        raise ValueError(f"delta_beta must lie in (0, 2a] = (0, {2 * a}]")
    val = m * n * (math.acos(delta_beta / (2 * a)) - theta) / (2 * math.pi * nu_max)
    return max(1, math.floor(val))


def delta_m_bounded(delta_beta: float, nu_max: float, a: float, theta: float,
                    m: int, n: int, es: float = 1.0) -> int:
    """Recycling span that provably keeps the measured filtered-MSE increase
    at or below delta_beta on a worst-case common-Doppler channel.

    Inverts the phase-rotation MSE increase 2*a*es*(cos(theta) - cos(theta +
    phi)): the arccos-formula variant above does not bound the measured
    increase, so tolerance-driven runs that must honor the bound use this.
    """
    if nu_max <= 0:
        raise ValueError("nu_max must be positive")
    if delta_beta <= 0 or a <= 0:
        raise ValueError("delta_beta and a must be positive")
    arg = math.cos(theta) - delta_beta / (2 * a * es)
    if arg <= -1.0:
        phi = math.pi - theta
    else:
        phi = math.acos(min(arg, 1.0)) - theta
    val = m * n * phi / (2 * math.pi * nu_max)
    return max(1, math.floor(val))


def coherence_symbols(m: int, n: int, nu_max: float) -> float:
    """Delay-resolution samples inside the channel coherence time, M*N/(2*nu_max)."""
    if nu_max <= 0:
        raise ValueError("nu_max must be positive")
    return m * n / (2.0 * nu_max)


def _target_column(taps: np.ndarray, m: int, l_max: int) -> np.ndarray:
    """h_col[f, n, r] = taps[f, n, m + r, r]: the window column of layer m."""
    sl = taps[:, :, m : m + l_max + 1, :]
    return np.diagonal(sl, axis1=2, axis2=3).copy()


def _window(taps: np.ndarray, m: int, l_max: int) -> tuple[np.ndarray, int, int]:
    """Sub-channel window (F, N, l_max+1, ncols) for layer m, plus (l', m')."""
    lp = min(m, l_max)
    mp = m - lp
    ncols = lp + l_max + 1
    sl = taps[:, :, m : m + l_max + 1, :]
    r = np.arange(l_max + 1)[:, None]
    c = np.arange(ncols)[None, :]
    tap = r - c + lp
    valid = (tap >= 0) & (tap <= l_max)
    idx = np.clip(tap, 0, l_max)
    win = np.take_along_axis(sl, idx[None, None], axis=3)
    win = win * valid[None, None]
    return win, lp, mp


def _batched_weights(win: np.ndarray, v_win: np.ndarray, h_col: np.ndarray,
                     noise_var: float, es: float) -> tuple[np.ndarray, np.ndarray]:
    """Batched MMSE weights over (F, N): returns (w, mu)."""
    a = np.einsum("fnrc,fnc,fnsc->fnrs", win, v_win, win.conj())
    k = a.shape[-1]
    a[..., np.arange(k), np.arange(k)] += noise_var
    if noise_var == 0.0:
        y = np.einsum("fnrs,fns->fnr", np.linalg.pinv(a), h_col)
    else:
        y = np.linalg.solve(a, h_col[..., None])[..., 0]
    w = es * y.conj()
    mu = np.einsum("fnr,fnr->fn", w, h_col)
    return w, mu


def _explicit_sigma2(w: np.ndarray, win: np.ndarray, v_err: np.ndarray,
                     lp: int, noise_var: float) -> np.ndarray:
    """Batched unnormalized output variance for arbitrary weights."""
    gains = np.einsum("fnr,fnrc->fnc", w, win)
    g2 = np.abs(gains) ** 2
    g2[..., lp] = 0.0
    return np.einsum("fnc,fnc->fn", g2, v_err) + np.sum(np.abs(w) ** 2, axis=-1) * noise_var


def _dd_posterior_batch(y: np.ndarray, v: np.ndarray, constellation: Constellation):
    pts = constellation.points
    v = np.maximum(v, _MIN_DD_VAR)
    d2 = np.abs(y[..., None] - pts) ** 2
    logits = -d2 / v[..., None]
    logits -= logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=-1, keepdims=True)
    mean = p @ pts
    var = np.maximum(p @ (np.abs(pts) ** 2) - np.abs(mean) ** 2, 0.0)
    hard_idx = np.argmin(d2, axis=-1)
    return mean, var, hard_idx


def detect_batch(
    rx: np.ndarray,
    taps: np.ndarray,
    noise_var: float,
    cfg: DetectorConfig,
    constellation: Constellation,
    *,
    k_max: float = 0.0,
    prior_mean: np.ndarray | None = None,
    prior_var: np.ndarray | None = None,
    truth: np.ndarray | None = None,
) -> tuple[DetectionState, ComplexityCounter]:
    """Run the detector over a batch of frames.

    rx is (F, N, M); taps is (F, N, M, l_max + 1) of believed channel taps;
    k_max is the believed largest Doppler magnitude (drives the recycling
    budget in approx mode). prior_mean/prior_var seed the time-domain
    estimates (turbo feedback); by default estimates start at zero with full
    symbol-energy uncertainty on the data layers.
    """
    rx = np.asarray(rx, dtype=np.complex128)
    frames, n_blocks, m_bins = rx.shape
    l_max = taps.shape[-1] - 1
    if taps.shape != (frames, n_blocks, m_bins, l_max + 1):
        raise ValueError(f"taps shape {taps.shape} does not match rx {rx.shape}")
    layers = m_bins - l_max
    es = cfg.es
    counter = ComplexityCounter()
    trace = DetectorTrace() if cfg.collect_trace else None

    s_est = np.zeros((frames, n_blocks, m_bins), dtype=np.complex128)
    v_est = np.zeros((frames, n_blocks, m_bins), dtype=np.float64)
    v_est[:, :, :layers] = es
    if prior_mean is not None:
        s_est[:, :, :layers] = prior_mean[:, :, :layers]
        v_est[:, :, :layers] = prior_var[:, :, :layers]

    # Interference-reduced residual: rx minus the synthesized contribution of
    # every current estimate. Kept current with O(l_max) updates per layer.
    resid = rx.copy()
    if prior_mean is not None:
        for l in range(l_max + 1):
            resid[:, :, l:] -= taps[:, :, l:, l] * s_est[:, :, : m_bins - l]

    dd_obs = np.zeros((frames, layers, n_blocks), dtype=np.complex128)
    dd_obs_var = np.zeros((frames, layers, n_blocks), dtype=np.float64)
    dd_mean = np.zeros((frames, layers, n_blocks), dtype=np.complex128)
    dd_var = np.zeros((frames, layers, n_blocks), dtype=np.float64)
    hard_idx_all = np.zeros((frames, layers, n_blocks), dtype=np.int64)
    mse_track = [] if truth is not None else None
    mse_linear_track = [] if truth is not None else None

    approx = cfg.mode == "approx"
    w_state = None
    for it in range(cfg.iterations):
        next_refresh = 0
        linear_err = 0.0
        for m in range(layers):
            h_col = _target_column(taps, m, l_max)
            win, lp, mp = _window(taps, m, l_max)
            v_win = v_est[:, :, mp : m + l_max + 1].copy()
            v_err = v_win.copy()  # interferer error variances (target excluded later)
            v_win[..., lp] = es

            refresh = (not approx) or (m == next_refresh)
            if refresh:
                w, mu = _batched_weights(win, v_win, h_col, noise_var, es)
                counter.add_weights(frames * n_blocks, l_max + 1)
                if approx:
                    w_state = w
                    span = _recycling_span(cfg, mu, k_max, n_blocks, m_bins, layers)
                    next_refresh = m + span + 1
                sigma2 = es * (mu.real - np.abs(mu) ** 2) / np.abs(mu) ** 2
            else:
                w = w_state
                mu = np.einsum("fnr,fnr->fn", w, h_col)
                raw = _explicit_sigma2(w, win, v_err, lp, noise_var)
                sigma2 = raw / np.abs(mu) ** 2
            counter.add_linear(frames * n_blocks * 2 * (l_max + 1))

            if np.any(np.abs(mu) < _DEGENERATE_MU):
                raise ValueError(f"degenerate layer {m}: effective gain ~ 0")

            r_hat = resid[:, :, m : m + l_max + 1] + h_col * s_est[:, :, m][..., None]
            est_norm = np.einsum("fnr,fnr->fn", w, r_hat) / mu
            if truth is not None:
                linear_err += float(np.sum(np.abs(est_norm - truth[:, :, m]) ** 2))

            if trace is not None:
                _record_trace(trace, it, m, mu, sigma2, es, refresh,
                              approx, win, v_win, v_err, h_col, lp, noise_var)

            y_dd = np.fft.fft(est_norm, axis=1, norm="ortho")
            post_mean, post_var, hard_idx = _dd_posterior_batch(y_dd, sigma2, constellation)

            if cfg.mode == "hard":
                fed_back = constellation.points[hard_idx]
                new_var = np.zeros((frames, 1))
            else:
                fed_back = post_mean
                # Unitary return transform: the time-domain variance is the
                # DD-posterior variance averaged over the layer.
                new_var = post_var.mean(axis=1, keepdims=True)
            s_new = np.fft.ifft(fed_back, axis=1, norm="ortho")

            delta = s_new - s_est[:, :, m]
            resid[:, :, m : m + l_max + 1] -= h_col * delta[..., None]
            s_est[:, :, m] = s_new
            v_est[:, :, m] = new_var
            counter.add_linear(frames * n_blocks * (l_max + 1))

            if it == cfg.iterations - 1:
                dd_obs[:, m] = y_dd
                dd_obs_var[:, m] = sigma2
                dd_mean[:, m] = post_mean
                dd_var[:, m] = post_var
                hard_idx_all[:, m] = hard_idx

        if mse_track is not None:
            err = s_est[:, :, :layers] - truth[:, :, :layers]
            mse_track.append(float(np.mean(np.abs(err) ** 2)))
            mse_linear_track.append(linear_err / (frames * n_blocks * layers))

    hard_grid = np.zeros((frames, m_bins, n_blocks), dtype=np.complex128)
    hard_grid[:, :layers, :] = constellation.points[hard_idx_all]
    state = DetectionState(
        time_mean=s_est,
        time_var=v_est,
        dd_obs=dd_obs,
        dd_obs_var=dd_obs_var,
        dd_mean=dd_mean,
        dd_var=dd_var,
        hard_grid=hard_grid,
        mse_per_iteration=mse_track,
        mse_linear_per_iteration=mse_linear_track,
        trace=trace,
    )
    return state, counter


def _recycling_span(cfg: DetectorConfig, mu: np.ndarray, k_max: float,
                    n_blocks: int, m_bins: int, layers: int) -> int:
    """Span until the next exact-weight refresh, from config or the budget
    formula on the freshest gains (worst block governs)."""
    if cfg.delta_m is not None:
        return cfg.delta_m
    if k_max <= 0:
        return layers  # static channel: recycle for the whole block
    fn = delta_m_bounded if cfg.bounded_budget else delta_m
    a = np.abs(mu)
    theta = np.abs(np.angle(mu))
    spans = [
        fn(min(cfg.delta_beta, 2 * av), k_max, float(av), float(th), m_bins, n_blocks)
        for av, th in zip(a.ravel(), theta.ravel())
    ]
    return max(1, min(spans))


def _record_trace(trace, it, m, mu, sigma2, es, refreshed, approx,
                  win, v_win, v_err, h_col, lp, noise_var):
    sinr = 10.0 * np.log10(es / np.maximum(sigma2, 1e-300))
    if approx and not refreshed:
        w_ref, mu_ref = _batched_weights(win, v_win, h_col, noise_var, es)
        sig_ref = es * (mu_ref.real - np.abs(mu_ref) ** 2) / np.abs(mu_ref) ** 2
        sinr_ref = 10.0 * np.log10(es / np.maximum(sig_ref, 1e-300))
    else:
        sinr_ref = sinr.copy()
    trace.iteration.append(it + 1)
    trace.layer.append(m)
    trace.mu.append(np.asarray(mu))
    trace.sigma2_post.append(np.asarray(sigma2))
    trace.sinr_db.append(sinr)
    trace.sinr_exact_db.append(sinr_ref)
    trace.refreshed.append(bool(refreshed))


def detect_frame(
    r: TimeSignal,
    blocks: BlockChannelSet,
    cfg: DetectorConfig,
    constellation: Constellation,
    *,
    k_max: float = 0.0,
    prior_mean: np.ndarray | None = None,
    prior_var: np.ndarray | None = None,
    truth: np.ndarray | None = None,
) -> tuple[DetectionState, np.ndarray, ComplexityCounter]:
    """Single-frame front end over detect_batch; returns the detection state,
    the hard DD symbol grid (M x N), and the complexity counter."""
    g = blocks.geometry
    rx = r.blocks[None]
    taps = blocks.taps[None]
    state, counter = detect_batch(
        rx, taps, blocks.noise_var, cfg, constellation,
        k_max=k_max,
        prior_mean=None if prior_mean is None else prior_mean[None],
        prior_var=None if prior_var is None else prior_var[None],
        truth=None if truth is None else truth[None],
    )
    return state, state.hard_grid[0], counter


def mrc_detect(
    rx: np.ndarray,
    taps: np.ndarray,
    iterations: int,
    constellation: Constellation,
) -> tuple[np.ndarray, ComplexityCounter]:
    """Iterative per-layer maximal-ratio combining baseline with hard DD
    decisions, run without any initial estimates.

    Per layer the interference-cancelled window is combined with the target
    column (matched filter over the delay branches), the layer is taken to
    the DD domain, hard-decided, and fed back. Returns the hard DD grid
    (F, M, N) and the counter; multiplies grow as layers * blocks * paths.
    """
    rx = np.asarray(rx, dtype=np.complex128)
    frames, n_blocks, m_bins = rx.shape
    l_max = taps.shape[-1] - 1
    layers = m_bins - l_max
    counter = ComplexityCounter()

    s_est = np.zeros((frames, n_blocks, m_bins), dtype=np.complex128)
    resid = rx.copy()
    hard_idx_all = np.zeros((frames, layers, n_blocks), dtype=np.int64)

    for _ in range(iterations):
        for m in range(layers):
            h_col = _target_column(taps, m, l_max)
            energy = np.sum(np.abs(h_col) ** 2, axis=-1)
            r_hat = resid[:, :, m : m + l_max + 1] + h_col * s_est[:, :, m][..., None]
            est = np.einsum("fnr,fnr->fn", h_col.conj(), r_hat) / np.maximum(energy, 1e-300)
            counter.add_linear(int(np.count_nonzero(np.abs(h_col[0, 0]) > 0)) * frames * n_blocks)

            y_dd = np.fft.fft(est, axis=1, norm="ortho")
            hard_idx = constellation.hard_indices(y_dd)
            s_new = np.fft.ifft(constellation.points[hard_idx], axis=1, norm="ortho")

            delta = s_new - s_est[:, :, m]
            resid[:, :, m : m + l_max + 1] -= h_col * delta[..., None]
            s_est[:, :, m] = s_new
            hard_idx_all[:, m] = hard_idx

    hard_grid = np.zeros((frames, m_bins, n_blocks), dtype=np.complex128)
    hard_grid[:, :layers, :] = constellation.points[hard_idx_all]
    return hard_grid, counter


def full_lmmse_oracle(r_n: np.ndarray, h_n: np.ndarray, noise_var: float,
                      es: float = 1.0) -> np.ndarray:
    """Dense one-shot LMMSE estimate of a whole block (test oracle only):
    es * H^H (es * H H^H + noise I)^(-1) r. Guarded to small dimensions."""
    h_n = np.asarray(h_n)
    m = h_n.shape[0]
    if m > 256:
        raise ValueError(f"dense LMMSE oracle limited to M <= 256, got {m}")
    a = es * (h_n @ h_n.conj().T) + noise_var * np.eye(m)
    return es * (h_n.conj().T @ np.linalg.solve(a, np.asarray(r_n)))
