"""Seeded trap landscapes and streaming analytics.

Positions are 0-based.  A 1-based sequence index ``i`` from the theory
refers to the positions ``0 .. i-1``; "count" below always means such an
``i``.

Randomness is counter based: the trap at position ``i`` depends only on
``(seed, i)``, so blocks can be generated in any order.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from numpy.random import Philox
from scipy import optimize

from .errors import DomainError, InsufficientLandscapeError, NotFoundError
from .logreal import LogMagnitude, lse_accumulate, lse_array, log1mexp
from .tails import AuxFunction, TailModel

# stream identifiers for the second Philox key word
STREAM_TRAPS = 0
STREAM_SKELETON = 1
STREAM_MC = 2

_U64_SCALE = 2.0**-53
_MAX_SEED = 2**64 - 1


def raw_block(seed: int, stream: int, start: int, stop: int) -> np.ndarray:
    """Raw 64-bit outputs ``start .. stop-1`` of the keyed Philox stream."""
    if not 0 <= seed <= _MAX_SEED:
        raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
    if start < 0 or stop < start:
        raise DomainError("invalid block range")
    if stop == start:
        return np.empty(0, dtype=np.uint64)
    # one Philox counter step yields four outputs
    bg = Philox(key=[seed, stream], counter=[start // 4, 0, 0, 0])
    skip = start % 4
    return bg.random_raw(stop - start + skip)[skip:]


def uniforms(raw: np.ndarray) -> np.ndarray:
    """Map raw words to uniforms strictly inside (0, 1)."""
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U64_SCALE


def exp_variates(seed: int, stream: int, start: int, stop: int) -> np.ndarray:
    return -np.log(uniforms(raw_block(seed, stream, start, stop)))


class _Prefix:
    """Growable prefix arrays: traps, cumulative log sums and running argmax."""

    __slots__ = ("ln_sigma", "ln_S", "argmax", "n", "lock")

    def __init__(self) -> None:
        self.ln_sigma = np.empty(0)
        self.ln_S = np.empty(0)
        self.argmax = np.empty(0, dtype=np.int64)
        self.n = 0
        self.lock = threading.Lock()


class TrapSource:
    """Common interface of seeded and planted landscapes."""

    model: TailModel | None
    #: largest prefix kept in memory
    prefix_cap: int = 1 << 22

    @property
    def length(self) -> int | None:
        return None

    def _generate(self, start: int, stop: int) -> np.ndarray:
        raise NotImplementedError

    def ln_traps(self, start: int, stop: int) -> np.ndarray:
        """``ln sigma`` at positions ``start .. stop-1``."""
        if start < 0 or stop < start:
            raise DomainError("invalid position range")
        n = self.length
        if n is not None and stop > n:
            raise InsufficientLandscapeError(
                f"landscape has {n} positions; position {stop - 1} requested", reached=n
            )
        pre = self._prefix_state()
        if stop <= pre.n:
            return pre.ln_sigma[start:stop].copy()
        return self._generate(start, stop)

    def trap_at(self, i: int) -> LogMagnitude:
        if i < 0:
            raise DomainError("position must be nonnegative")
        return LogMagnitude(float(self.ln_traps(i, i + 1)[0]))

    def chunks(self, start: int, stop: int, size: int = 1 << 20, first: int | None = None) -> Iterator[tuple[int, np.ndarray]]:
        """Consecutive blocks; with ``first`` the block size doubles from ``first`` up to ``size``."""
        pos = start
        step = size if first is None else min(first, size)
        while pos < stop:
            end = min(stop, pos + step)
            yield pos, self.ln_traps(pos, end)
            pos = end
            step = min(2 * step, size)

    # -------------------------------------------------------------- prefix
    def _prefix_state(self) -> _Prefix:
        pre = self.__dict__.get("_prefix")
        if pre is None:
            pre = _Prefix()
            object.__setattr__(self, "_prefix", pre)
        return pre

    def prefix(self, n: int) -> _Prefix:
        """Ensure the first ``n`` positions are cached and return the cache."""
        pre = self._prefix_state()
        if n <= pre.n:
            return pre
        if n > self.prefix_cap:
            raise InsufficientLandscapeError(
                f"requested prefix of {n} positions exceeds the in-memory cap {self.prefix_cap}",
                reached=pre.n,
            )
        length = self.length
        if length is not None and n > length:
            raise InsufficientLandscapeError(
                f"landscape has {length} positions; {n} requested", reached=length
            )
        with pre.lock:
            if n <= pre.n:
                return pre
            target = max(n, min(2 * pre.n, self.prefix_cap), 1024)
            if length is not None:
                target = min(target, length)
            new = self._generate(pre.n, target)
            carry = float(pre.ln_S[-1]) if pre.n else -math.inf
            new_S = lse_accumulate(new, carry)
            if pre.n:
                best = int(pre.argmax[-1])
                best_val = float(pre.ln_sigma[best])
            else:
                best, best_val = 0, -math.inf
            new_arg = _running_argmax(new, pre.n, best, best_val)
            pre.ln_sigma = np.concatenate((pre.ln_sigma, new))
            pre.ln_S = np.concatenate((pre.ln_S, new_S))
            pre.argmax = np.concatenate((pre.argmax, new_arg))
            pre.n = target
        return pre


def _running_argmax(values: np.ndarray, offset: int, best: int, best_val: float) -> np.ndarray:
    """Position of the running maximum (first occurrence), continuing a carry."""
    if values.size == 0:
        return np.empty(0, dtype=np.int64)
    run = np.maximum.accumulate(np.concatenate(([best_val], values)))[1:]
    is_new = values > np.concatenate(([best_val], run[:-1]))
    idx = np.where(is_new, np.arange(values.size, dtype=np.int64) + offset, -1)
    idx = np.maximum.accumulate(idx)
    return np.where(idx < 0, best, idx)


@dataclass(frozen=True, eq=False)
class Landscape(TrapSource):
    """I.i.d. traps keyed by ``(seed, position)``."""

    model: TailModel
    seed: int

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) <= _MAX_SEED:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def _generate(self, start: int, stop: int) -> np.ndarray:
        return np.asarray(
            self.model.ln_sigma_from_exp(exp_variates(self.seed, STREAM_TRAPS, start, stop)), dtype=float
        ).reshape(-1)


@dataclass(frozen=True, eq=False)
class PlantedLandscape(TrapSource):
    """A finite landscape with prescribed ``ln sigma`` values."""

    ln_sigma: np.ndarray
    model: TailModel | None = None

    def __post_init__(self) -> None:
        arr = np.asarray(self.ln_sigma, dtype=float).reshape(-1)
        if arr.size == 0 or not np.all(np.isfinite(arr)):
            raise DomainError("planted traps must be finite log magnitudes (strictly positive traps)")
        arr.setflags(write=False)
        object.__setattr__(self, "ln_sigma", arr)

    @classmethod
    def from_values(cls, values: Sequence[float], model: TailModel | None = None) -> PlantedLandscape:
        v = np.asarray(values, dtype=float)
        if np.any(v <= 0):
            raise DomainError("planted traps must be strictly positive")
        return cls(np.log(v), model)

    @property
    def length(self) -> int:
        return int(self.ln_sigma.size)

    def _generate(self, start: int, stop: int) -> np.ndarray:
        if stop > self.length:
            raise InsufficientLandscapeError(
                f"landscape has {self.length} positions; position {stop - 1} requested", reached=self.length
            )
        return self.ln_sigma[start:stop].copy()


# ------------------------------------------------------------------ records

@dataclass(frozen=True)
class RecordEntry:
    r: int
    sigma: LogMagnitude
    s_minus: LogMagnitude


@dataclass
class RecordSkeleton:
    """Records ``(r_n, sigma_(n), S_(n)^-)``; ``entries[0]`` is the first record."""

    entries: list[RecordEntry] = field(default_factory=list)
    approximate: bool = False
    blocks: list[dict] | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, n: int) -> RecordEntry:
        """The ``n``-th record, 1-based as in the theory."""
        if n < 1 or n > len(self.entries):
            raise InsufficientLandscapeError(f"record {n} not available ({len(self.entries)} known)")
        return self.entries[n - 1]

    def to_json(self) -> dict:
        out = {
            "approximate": self.approximate,
            "entries": [
                {"r": e.r, "ln_sigma": e.sigma.to_json(), "ln_s_minus": e.s_minus.to_json()} for e in self.entries
            ],
        }
        if self.blocks is not None:
            out["blocks"] = self.blocks
        return out


def records_upto(src: TrapSource, n_records: int, i_cap: int) -> RecordSkeleton:
    """First ``n_records`` records found within ``i_cap`` positions."""
    entries: list[RecordEntry] = []
    best = -math.inf
    carry = -math.inf
    for start, chunk in src.chunks(0, i_cap if src.length is None else min(i_cap, src.length), 1 << 16, first=256):
        prev = np.maximum.accumulate(np.concatenate(([best], chunk)))[:-1]
        S = lse_accumulate(chunk, carry)
        S_before = np.concatenate(([carry], S[:-1]))
        for k in np.flatnonzero(chunk > prev):
            entries.append(RecordEntry(start + int(k), LogMagnitude(chunk[k]), LogMagnitude(S_before[k])))
            if len(entries) == n_records:
                return RecordSkeleton(entries)
        best = max(best, float(chunk.max()))
        carry = float(S[-1])
    raise NotFoundError(f"only {len(entries)} records within {i_cap} positions", reached=i_cap)


# ------------------------------------------------------------------ scanning

@dataclass
class ScanSnapshot:
    i: int
    ln_S: float
    ln_m: float
    argmax_position: int
    top_k: list[tuple[int, float]]
    level_sums: dict[float, float]
    ln_rest: float
    max_ln_ratio: float
    n_records: int
    window_max_ln_ratio: float = -math.inf  # max of ln(S/m) since the previous checkpoint

    @property
    def S(self) -> LogMagnitude:
        return LogMagnitude(self.ln_S)

    @property
    def m(self) -> LogMagnitude:
        return LogMagnitude(self.ln_m)

    @property
    def ratio(self) -> float:
        return math.exp(self.ln_S - self.ln_m)

    def ln_S_k(self, k: int) -> float:
        """``ln S_i^{(k)}``: sum with the ``k-1`` largest removed, built by additions only."""
        if k < 1 or k > len(self.top_k) + 1:
            raise DomainError(f"k must lie in 1..{len(self.top_k) + 1}")
        kept = [v for _, v in self.top_k[k - 1:]]
        return lse_array(np.array(kept + [self.ln_rest]))

    def ln_S_k_subtractive(self, k: int) -> float:
        """Same quantity through ``sub_positive``; loses digits under cancellation."""
        from .logreal import sub_positive

        if k == 1:
            return self.ln_S
        top = LogMagnitude(min(lse_array(np.array([v for _, v in self.top_k[: k - 1]])), self.ln_S))
        return sub_positive(self.S, top).ln_value

    def to_json(self) -> dict:
        return {
            "i": self.i,
            "ln_S": self.ln_S,
            "ln_m": self.ln_m,
            "ratio": self.ratio,
            "argmax_position": self.argmax_position,
            "top_k": [[p, v] for p, v in self.top_k],
            "level_sums": [[lv, (s if s > -math.inf else "-inf")] for lv, s in self.level_sums.items()],
            "max_ln_ratio": self.max_ln_ratio,
            "window_max_ln_ratio": self.window_max_ln_ratio,
            "n_records": self.n_records,
        }


@dataclass
class ScanResult:
    snapshots: list[ScanSnapshot]
    skeleton: RecordSkeleton


def scan(
    src: TrapSource,
    i_max: int,
    K: int = 8,
    levels: Sequence[float] = (),
    checkpoints: Sequence[int] = (),
    chunk: int = 1 << 20,
) -> ScanResult:
    """Single streaming pass over positions ``0 .. i_max-1``.

    ``levels`` are given as ``ln ell``.  Snapshots are emitted at each
    checkpoint count; the state carried between chunks is O(K + |levels|).
    """
    if i_max < 1 or K < 1:
        raise DomainError("need i_max >= 1 and K >= 1")
    cps = sorted(set(int(c) for c in checkpoints))
    if cps and (cps[0] < 1 or cps[-1] > i_max):
        raise DomainError("checkpoints must lie in [1, i_max]")
    levels = [float(x) for x in levels]

    ln_S = -math.inf
    best = -math.inf
    best_pos = -1
    max_ratio = 0.0
    win_ratio = -math.inf
    lvl = [-math.inf] * len(levels)
    top_pos = np.empty(0, dtype=np.int64)
    top_val = np.empty(0)
    rest = -math.inf
    entries: list[RecordEntry] = []
    snaps: list[ScanSnapshot] = []
    cp_set = set(cps)
    cp_iter = iter(cps)
    next_cp = next(cp_iter, None)

    for start, block in src.chunks(0, i_max, chunk):
        # split the chunk at checkpoints so snapshots see exact prefixes
        cuts = [0]
        while next_cp is not None and next_cp <= start + block.size:
            cuts.append(next_cp - start)
            next_cp = next(cp_iter, None)
        if cuts[-1] != block.size:
            cuts.append(block.size)
        for a, b in zip(cuts[:-1], cuts[1:]):
            piece = block[a:b]
            off = start + a
            if piece.size:
                S = lse_accumulate(piece, ln_S)
                S_before = np.concatenate(([ln_S], S[:-1]))
                prev = np.maximum.accumulate(np.concatenate(([best], piece)))
                run = prev[1:]
                for k in np.flatnonzero(piece > prev[:-1]):
                    entries.append(RecordEntry(off + int(k), LogMagnitude(piece[k]), LogMagnitude(S_before[k])))
                piece_ratio = float(np.max(S - run))
                max_ratio = max(max_ratio, piece_ratio)
                win_ratio = max(win_ratio, piece_ratio)
                ln_S = float(S[-1])
                j = int(np.argmax(piece))
                if piece[j] > best:
                    best, best_pos = float(piece[j]), off + j
                for li, lev in enumerate(levels):
                    below = np.where(piece < lev, piece, -np.inf)
                    acc = lse_accumulate(below, lvl[li])
                    lvl[li] = float(acc[-1])
                # top-K merge; evicted values join the remainder sum
                take = min(K, piece.size)
                idx = np.argpartition(-piece, take - 1)[:take] if take < piece.size else np.arange(piece.size)
                mask = np.ones(piece.size, dtype=bool)
                mask[idx] = False
                rest = float(np.logaddexp(rest, lse_array(piece[mask])))
                cand_pos = np.concatenate((top_pos, idx.astype(np.int64) + off))
                cand_val = np.concatenate((top_val, piece[idx]))
                order = np.lexsort((cand_pos, -cand_val))
                keep, drop = order[:K], order[K:]
                if drop.size:
                    rest = float(np.logaddexp(rest, lse_array(cand_val[drop])))
                top_pos, top_val = cand_pos[keep], cand_val[keep]
            i = start + b
            if i in cp_set and (not snaps or snaps[-1].i != i):
                snaps.append(
                    ScanSnapshot(
                        i=i,
                        ln_S=ln_S,
                        ln_m=best,
                        argmax_position=best_pos,
                        top_k=[(int(p), float(v)) for p, v in zip(top_pos, top_val)],
                        level_sums=dict(zip(levels, lvl)),
                        ln_rest=rest,
                        max_ln_ratio=max_ratio,
                        n_records=len(entries),
                        window_max_ln_ratio=win_ratio,
                    )
                )
                win_ratio = -math.inf
    return ScanResult(snaps, RecordSkeleton(entries))


# -------------------------------------------------------------- exceedences

def first_exceedence(src: TrapSource, x_level: LogMagnitude | float, i_cap: int) -> tuple[int, int | None]:
    """First position with ``sigma > x`` and the argmax position before it."""
    lx = x_level.ln_value if isinstance(x_level, LogMagnitude) else float(x_level)
    if i_cap < 1:
        raise DomainError("i_cap must be >= 1")
    best, best_pos = -math.inf, None
    stop = i_cap if src.length is None else min(i_cap, src.length)
    for start, block in src.chunks(0, stop, 1 << 16):
        hits = np.flatnonzero(block > lx)
        if hits.size:
            h = int(hits[0])
            if h:
                j = int(np.argmax(block[:h]))
                if block[j] > best:
                    best_pos = start + j
            return start + h, best_pos
        j = int(np.argmax(block))
        if block[j] > best:
            best, best_pos = float(block[j]), start + j
    if src.length is not None and stop == src.length and stop < i_cap:
        raise InsufficientLandscapeError(f"no exceedence within the {stop} planted positions", reached=stop)
    raise NotFoundError(f"no exceedence of level within {i_cap} positions", reached=i_cap)


def ell_of_t(model: TailModel, ln_t: float) -> LogMagnitude:
    """Level ``ell_t`` solving ``s L(s) = t`` (``t`` given by its log)."""
    if not math.isfinite(ln_t):
        raise DomainError("t must be a finite positive time")
    hi = ln_t
    lo = ln_t - float(model.ln_L(ln_t))

    def f(x: float) -> float:
        return x + float(model.ln_L(x)) - ln_t

    if f(hi) <= 0:
        return LogMagnitude(hi)
    if f(lo) >= 0:
        return LogMagnitude(lo)
    x = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return LogMagnitude(x)


def _search_prefix(src: TrapSource, key_fn, i_cap: int):
    """Smallest count whose monotone key exceeds a threshold, growing the prefix."""
    n = 1024
    while True:
        n_eff = min(n, i_cap)
        if src.length is not None:
            n_eff = min(n_eff, src.length)
        pre = src.prefix(n_eff)
        found = key_fn(pre, n_eff)
        if found is not None:
            return found, pre
        if n_eff >= i_cap:
            raise NotFoundError(f"search reached i_cap={i_cap}", reached=i_cap)
        if src.length is not None and n_eff >= src.length:
            raise InsufficientLandscapeError(f"search ran off the {src.length} planted positions", reached=n_eff)
        n *= 4


def hyperbolic_exceedence(src: TrapSource, ln_t: float, aux: AuxFunction, i_cap: int = 1 << 22) -> tuple[int, int]:
    """``(j_t, j_t^-)``: first count with ``i S_i > t/h_t`` and the argmax position below it."""
    thr = ln_t - float(aux.ln_h(ln_t))

    def key(pre: _Prefix, n: int):
        counts = np.arange(1, n + 1, dtype=float)
        keyv = np.log(counts) + pre.ln_S[:n]
        k = int(np.searchsorted(keyv, thr, side="right"))
        # keyv is nondecreasing; guard against ties from rounding
        while k < n and not keyv[k] > thr:
            k += 1
        return k + 1 if k < n else None

    j, pre = _search_prefix(src, key, i_cap)
    return j, int(pre.argmax[j - 1])


# ------------------------------------------------------------ skeleton sampler

def _geometric(u: float, ln_p: float) -> int:
    """Geometric on {1, 2, ...} with success probability ``exp(ln_p)`` by inversion."""
    denom = math.log1p(-math.exp(ln_p)) if ln_p < 0 else -math.inf
    if denom == -math.inf:
        return 1
    g = math.floor(math.log(u) / denom) + 1
    return int(g)


def sample_record_skeleton(
    model: TailModel,
    n_max: int,
    seed: int,
    eps0: float,
    K_block: int = 8,
    first_ln_L: float | None = None,
) -> RecordSkeleton:
    """Sample the record chain directly; block remainders use conditional means.

    ``first_ln_L`` pins ``ln L(sigma_(1))`` (used to compare against direct
    streams with matched first records).  The result is flagged approximate.
    """
    if n_max < 1:
        raise DomainError("n_max must be >= 1")
    if not 0 < eps0 < 1:
        raise DomainError("eps0 must lie in (0, 1)")
    if K_block < 0:
        raise DomainError("K_block must be >= 0")
    rng = np.random.Generator(Philox(key=[seed, STREAM_SKELETON]))
    lnL = float(first_ln_L) if first_ln_L is not None else float(rng.exponential())
    ln_sig = float(model.ln_Linv(lnL))
    entries = [RecordEntry(0, LogMagnitude(ln_sig), LogMagnitude.zero())]
    blocks: list[dict] = []
    ln_shift = math.log1p(-eps0)
    s_minus = -math.inf
    r = 0
    for _ in range(1, n_max):
        v_lnL = lnL
        ln_p = -v_lnL
        gap = _geometric(1.0 - float(rng.random()), ln_p)
        a_ln = ln_sig + ln_shift
        a_lnL = float(model.ln_L(a_ln))
        # probability a block trap is a near-record, given it lies below sigma_(n-1)
        ln_num = -a_lnL + float(log1mexp(v_lnL - a_lnL)) if v_lnL > a_lnL else -math.inf
        ln_q = ln_num - float(log1mexp(v_lnL)) if v_lnL > 0 else -math.inf
        n_block = gap - 1
        q = math.exp(ln_q) if ln_q > -math.inf else 0.0
        if n_block <= 0 or q == 0.0:
            count = 0
        elif n_block < 2**62:
            count = int(rng.binomial(n_block, min(q, 1.0)))
        else:
            count = int(rng.poisson(n_block * q))
        kept = min(count, K_block)
        near = []
        if kept:
            # 1/L(sigma) is uniform on (1/L(v), 1/L(a)) for the conditioned law
            u = rng.random(kept)
            ln_w = np.logaddexp(-v_lnL, np.log(u) + ln_num)
            vals = np.asarray(model.ln_Linv(-ln_w), dtype=float).reshape(-1)
            offs: set[int] = set()
            while len(offs) < kept:
                offs.add(int(rng.integers(1, n_block + 1)) if n_block < 2**62 else int(rng.random() * n_block) + 1)
            pos = sorted(offs)
            near = [(r + p, float(val)) for p, val in zip(pos, vals)]
        # sub-threshold traps contribute their conditional mean
        n_sub = n_block - count
        ln_rem = (
            math.log(n_sub) + model.ln_conditional_mean_below(a_ln) if n_sub > 0 else -math.inf
        )
        ln_near = lse_array(np.array([v for _, v in near])) if near else -math.inf
        if count > kept:
            ln_near = float(np.logaddexp(ln_near, math.log(count - kept) + float(np.mean([v for _, v in near]))))
        s_minus = float(lse_array(np.array([s_minus, ln_sig, ln_near, ln_rem])))
        blocks.append(
            {
                "n": len(entries) + 1,
                "gap": gap,
                "near_count": count,
                "near": [[p, v] for p, v in near],
                "ln_remainder": ln_rem if ln_rem > -math.inf else "-inf",
                "ln_q": ln_q if ln_q > -math.inf else "-inf",
            }
        )
        r += gap
        lnL = v_lnL + float(rng.exponential())
        ln_sig = float(model.ln_Linv(lnL))
        entries.append(RecordEntry(r, LogMagnitude(ln_sig), LogMagnitude(s_minus)))
    return RecordSkeleton(entries, approximate=True, blocks=blocks)
