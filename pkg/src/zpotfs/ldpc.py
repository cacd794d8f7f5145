"""LDPC encoding and belief-propagation decoding.

LLR convention throughout: positive means bit 0 is more likely. The bundled
default is a seeded regular column-weight-3, row-weight-6 code of length
1024; externally supplied parity matrices load from the standard alist text
format, so longer production codes drop in unchanged.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

LLR_CLAMP = 50.0  # keeps tanh/exp finite; sign is always preserved
_TANH_EPS = 1e-15


class LdpcCode:
    """A binary LDPC code defined by its parity-check connections."""

    def __init__(self, check_neighbors: list[list[int]], n: int):
        self.n = n
        self.check_neighbors = [sorted(c) for c in check_neighbors]
        self.m = len(check_neighbors)
        edges_check = []
        edges_var = []
        for c, neigh in enumerate(self.check_neighbors):
            if len(set(neigh)) != len(neigh):
                raise ValueError(f"check {c} has repeated variable nodes")
            for v in neigh:
                edges_check.append(c)
                edges_var.append(v)
        self._echeck = np.asarray(edges_check, dtype=np.int64)
        self._evar = np.asarray(edges_var, dtype=np.int64)
        degrees = np.bincount(self._echeck, minlength=self.m)
        self._starts = np.concatenate(([0], np.cumsum(degrees)[:-1]))
        self._build_encoder()

    # -- construction / io ---------------------------------------------------

    def dense_h(self) -> np.ndarray:
        h = np.zeros((self.m, self.n), dtype=np.uint8)
        h[self._echeck, self._evar] = 1
        return h

    def _build_encoder(self):
        h = self.dense_h()
        rref, pivots = _gf2_rref(h)
        self.rank = len(pivots)
        self._pivot_cols = np.asarray(pivots, dtype=np.int64)
        free = np.setdiff1d(np.arange(self.n), self._pivot_cols)
        self.info_positions = free
        self._parity_map = rref[:, free]  # parity bits = parity_map @ info (mod 2)

    @property
    def k(self) -> int:
        return self.n - self.rank

    @property
    def rate(self) -> float:
        return self.k / self.n

    def encode(self, info_bits: np.ndarray) -> np.ndarray:
        info_bits = np.asarray(info_bits, dtype=np.uint8)
        if info_bits.shape[-1] != self.k:
            raise ValueError(f"expected {self.k} info bits, got {info_bits.shape[-1]}")
        word = np.zeros(info_bits.shape[:-1] + (self.n,), dtype=np.uint8)
        word[..., self.info_positions] = info_bits
        parity = (info_bits @ self._parity_map.T) % 2
        word[..., self._pivot_cols] = parity
        return word

    def syndrome(self, word: np.ndarray) -> np.ndarray:
        bits = np.asarray(word, dtype=np.int64)
        return np.bincount(self._echeck, weights=bits[self._evar], minlength=self.m).astype(
            np.int64
        ) % 2

    # -- decoding --------------------------------------------------------------

    def decode(self, llr_in: np.ndarray, max_iters: int = 50,
               min_sum: bool = False) -> tuple[np.ndarray, np.ndarray, bool]:
        """Sum-product (or min-sum) decoding with early exit on zero syndrome.

        Returns (posterior LLRs, hard bits, converged flag); the posterior is
        the full intrinsic output llr_in + sum of check messages.
        """
        llr = np.clip(np.asarray(llr_in, dtype=np.float64), -LLR_CLAMP, LLR_CLAMP)
        if llr.shape != (self.n,):
            raise ValueError(f"expected {self.n} LLRs, got {llr.shape}")
        ev, ec, starts = self._evar, self._echeck, self._starts
        c2v = np.zeros(ev.size)
        hard = (llr < 0).astype(np.uint8)
        converged = not self.syndrome(hard).any()
        it = 0
        while not converged and it < max_iters:
            it += 1
            totals = np.bincount(ev, weights=c2v, minlength=self.n)
            v2c = llr[ev] + totals[ev] - c2v
            if min_sum:
                c2v = _min_sum_update(v2c, ec, starts)
            else:
                t = np.tanh(0.5 * v2c)
                t = np.sign(t + (t == 0)) * np.clip(np.abs(t), 1e-12, 1.0 - _TANH_EPS)
                prod = np.multiply.reduceat(t, starts)
                excl = np.clip(prod[ec] / t, -1.0 + _TANH_EPS, 1.0 - _TANH_EPS)
                c2v = 2.0 * np.arctanh(excl)
            posterior = llr + np.bincount(ev, weights=c2v, minlength=self.n)
            hard = (posterior < 0).astype(np.uint8)
            converged = not self.syndrome(hard).any()
        posterior = llr + np.bincount(ev, weights=c2v, minlength=self.n)
        return posterior, hard, converged

    # -- alist text format -----------------------------------------------------

    def to_alist(self) -> str:
        var_neigh = [[] for _ in range(self.n)]
        for c, neigh in enumerate(self.check_neighbors):
            for v in neigh:
                var_neigh[v].append(c)
        col_deg = [len(x) for x in var_neigh]
        row_deg = [len(x) for x in self.check_neighbors]
        lines = [f"{self.n} {self.m}", f"{max(col_deg)} {max(row_deg)}"]
        lines.append(" ".join(map(str, col_deg)))
        lines.append(" ".join(map(str, row_deg)))
        width_c = max(col_deg)
        width_r = max(row_deg)
        for v in range(self.n):
            entries = [c + 1 for c in var_neigh[v]] + [0] * (width_c - col_deg[v])
            lines.append(" ".join(map(str, entries)))
        for c in range(self.m):
            entries = [v + 1 for v in self.check_neighbors[c]] + [0] * (width_r - row_deg[c])
            lines.append(" ".join(map(str, entries)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_alist(cls, text: str) -> "LdpcCode":
        tokens = text.split()
        pos = 0

        def take(count):
            nonlocal pos
            out = [int(t) for t in tokens[pos : pos + count]]
            pos += count
            return out

        n, m = take(2)
        take(2)  # max degrees, implied by the lists
        col_deg = take(n)
        row_deg = take(m)
        for deg in col_deg:  # skip the per-column lists (zero padded)
            take(max(col_deg))
        check_neighbors = []
        for c in range(m):
            entries = take(max(row_deg))
            check_neighbors.append([v - 1 for v in entries if v > 0])
        return cls(check_neighbors, n)


def _gf2_rref(h: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Row-reduced echelon form over GF(2); returns (reduced rows, pivot cols)."""
    h = h.copy()
    m, n = h.shape
    pivots = []
    r = 0
    for col in range(n):
        hits = np.nonzero(h[r:, col])[0]
        if hits.size == 0:
            continue
        pr = r + hits[0]
        if pr != r:
            h[[r, pr]] = h[[pr, r]]
        mask = h[:, col].astype(bool).copy()
        mask[r] = False
        h[mask] ^= h[r]
        pivots.append(col)
        r += 1
        if r == m:
            break
    return h[:r], pivots


def _min_sum_update(v2c: np.ndarray, ec: np.ndarray, starts: np.ndarray) -> np.ndarray:
    mag = np.abs(v2c)
    sgn = np.where(v2c < 0, -1.0, 1.0)
    sign_prod = np.multiply.reduceat(sgn, starts)
    m1 = np.minimum.reduceat(mag, starts)
    pos = np.arange(mag.size, dtype=np.float64)
    first_pos = np.minimum.reduceat(np.where(mag == m1[ec], pos, np.inf), starts)
    is_first_min = pos == first_pos[ec]
    m2 = np.minimum.reduceat(np.where(is_first_min, np.inf, mag), starts)
    m2 = np.where(np.isinf(m2), m1, m2)
    excl_mag = np.where(is_first_min, m2[ec], m1[ec])
    excl_sign = sign_prod[ec] * sgn
    return excl_sign * excl_mag


def make_regular_code(n: int = 1024, col_deg: int = 3, row_deg: int = 6,
                      seed: int = 20240601) -> LdpcCode:
    """Seeded random regular code via socket matching with duplicate repair."""
    if (n * col_deg) % row_deg != 0:
        raise ValueError("n * col_deg must be divisible by row_deg")
    m = n * col_deg // row_deg
    rng = np.random.default_rng(seed)
    var_sockets = rng.permutation(np.repeat(np.arange(n), col_deg))
    check_of = np.repeat(np.arange(m), row_deg)
    edges = var_sockets.copy()
    for _ in range(1000):
        pairs = check_of.astype(np.int64) * n + edges
        _, first_idx = np.unique(pairs, return_index=True)
        dup_mask = np.ones(edges.size, dtype=bool)
        dup_mask[first_idx] = False
        dups = np.nonzero(dup_mask)[0]
        if dups.size == 0:
            break
        for i in dups:  # pairwise swaps keep every variable's degree intact
            j = int(rng.integers(edges.size))
            edges[i], edges[j] = edges[j], edges[i]
    else:
        raise RuntimeError("failed to build a simple regular graph")
    check_neighbors = [list(edges[i * row_deg : (i + 1) * row_deg]) for i in range(m)]
    return LdpcCode(check_neighbors, n)


@lru_cache(maxsize=4)
def default_code(n: int = 1024) -> LdpcCode:
    """The bundled desk-scale half-rate code (cached; deterministic)."""
    return make_regular_code(n=n)
