"""Localisation sets, relocalisation times and near-record configurations.

All positions are 0-based sites of the half-line.  Magnitudes are carried
as natural logs (``ln_*`` names) or :class:`LogMagnitude` values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, InsufficientLandscapeError, NotFoundError
from .landscape import TrapSource, ell_of_t, first_exceedence, hyperbolic_exceedence, records_upto
from .logreal import LogMagnitude, lse_array
from .tails import AuxFunction

_CHUNK = 1 << 16


def _positions_count(base: int, ln_w: float, i_cap: int) -> int:
    """``ceil(base + w)`` for a window of width ``w = exp(ln_w)``, capped."""
    if ln_w > math.log(i_cap + 1.0):
        return i_cap + 1
    return base + math.ceil(math.exp(ln_w))


def _first_above(src: TrapSource, start: int, stop: int, ln_level: float) -> int | None:
    """First position in ``[start, stop)`` whose trap exceeds the level."""
    if src.length is not None:
        stop = min(stop, src.length)
    for pos, block in src.chunks(start, stop, _CHUNK, first=256):
        hits = np.flatnonzero(block > ln_level)
        if hits.size:
            return pos + int(hits[0])
    return None


def lower_boundary(ln_sorted: np.ndarray, ln_threshold: float) -> float:
    """Largest level ``l`` whose strict-below sum stays under the threshold.

    ``ln_sorted`` holds the candidate traps in ascending order.  The sum of
    traps strictly below ``l`` is a left-continuous step function of ``l``,
    so the maximum is attained at the first trap whose inclusive running
    sum reaches the threshold.
    """
    cum = np.logaddexp.accumulate(ln_sorted)
    k = int(np.searchsorted(cum, ln_threshold, side="left"))
    if k >= ln_sorted.size:
        return math.inf
    return float(ln_sorted[k])


def lower_boundary_bruteforce(ln_values: np.ndarray, ln_threshold: float) -> float:
    """Reference for :func:`lower_boundary` by trying every candidate level."""
    best = -math.inf
    vals = np.asarray(ln_values, dtype=float)
    for level in list(vals) + [math.inf]:
        below = vals[vals < level]
        s = lse_array(below) if below.size else -math.inf
        if s < ln_threshold and level > best:
            best = level
    return float(best)


@dataclass(frozen=True)
class Chain:
    sites: list[int]
    ln_sigma: list[float]
    ln_outer_width: float

    @property
    def last(self) -> int:
        return self.sites[-1]


def chain_from(src: TrapSource, start: int, ln_t: float, ln_h: float, i_cap: int = 1 << 22) -> Chain:
    """Extend from ``start`` to deeper traps inside successive windows.

    From ``y`` the next site is the first ``z`` with ``y < z < y + w`` and
    ``sigma_z > sigma_y``, where ``w = h max(t / sigma_y, 1)``.
    """
    y = start
    ln_y = float(src.ln_traps(y, y + 1)[0])
    sites, lns = [y], [ln_y]
    while True:
        ln_w = ln_h + max(ln_t - ln_y, 0.0)
        end = _positions_count(y, ln_w, i_cap)  # exclusive bound of the open window
        if end > i_cap:
            z = _first_above(src, y + 1, i_cap, ln_y)
            if z is None:
                raise InsufficientLandscapeError(
                    f"chaining window from site {y} runs past i_cap={i_cap}", reached=i_cap
                )
        else:
            z = _first_above(src, y + 1, end, ln_y)
            if z is None and src.length is not None and end > src.length:
                raise InsufficientLandscapeError(
                    f"chaining window from site {y} runs past the {src.length} planted positions",
                    reached=src.length,
                )
        if z is None:
            return Chain(sites, lns, ln_w)
        y, ln_y = z, float(src.ln_traps(z, z + 1)[0])
        sites.append(y)
        lns.append(ln_y)


@dataclass(frozen=True)
class LocalisationSnapshot:
    ln_t: float
    ell_t: LogMagnitude | None
    Z_t: int | None
    j_t: int
    z_I: int
    chain: list[int]
    z_O: int
    O_t: float
    n_below_O: int  # number of sites strictly left of O_t
    D_t: LogMagnitude
    gamma_set: list[int]
    ln_h: float

    @property
    def t(self) -> float:
        return math.exp(self.ln_t)

    def to_json(self) -> dict:
        return {
            "ln_t": self.ln_t,
            "ln_ell_t": None if self.ell_t is None else self.ell_t.to_json(),
            "Z_t": self.Z_t,
            "j_t": self.j_t,
            "z_I": self.z_I,
            "chain": list(self.chain),
            "z_O": self.z_O,
            "O_t": self.O_t,
            "ln_D_t": self.D_t.to_json(),
            "gamma_set": list(self.gamma_set),
        }


def build_snapshot(src: TrapSource, t, aux: AuxFunction, i_cap: int = 1 << 22) -> LocalisationSnapshot:
    """Localisation set and its ingredients at time ``t`` (a float or LogMagnitude)."""
    ln_t = t.ln_value if isinstance(t, LogMagnitude) else math.log(float(t))
    if not math.isfinite(ln_t):
        raise DomainError("t must be a finite positive time")
    ln_h = float(aux.ln_h(ln_t))
    j, z_I = hyperbolic_exceedence(src, ln_t, aux, i_cap)
    ch = chain_from(src, z_I, ln_t, ln_h, i_cap)
    z_O = ch.last
    n_O = _positions_count(z_O, ch.ln_outer_width, i_cap)
    if n_O > i_cap:
        raise InsufficientLandscapeError(f"outer boundary beyond i_cap={i_cap}", reached=i_cap)
    O_t = z_O + math.exp(ch.ln_outer_width)
    ln_all = src.ln_traps(0, n_O)
    thr = ch.ln_sigma[0] - ln_h
    ln_D = lower_boundary(np.sort(ln_all), thr)
    gamma = np.flatnonzero(ln_all >= ln_D).tolist()
    ell = Z = None
    if src.model is not None:
        ell = ell_of_t(src.model, ln_t)
        Z, _ = first_exceedence(src, ell, i_cap)
    return LocalisationSnapshot(ln_t, ell, Z, j, z_I, ch.sites, z_O, O_t, n_O, LogMagnitude(ln_D), gamma, ln_h)


# ------------------------------------------------------------------ relocalisation

def reloc_rhs(skeleton, n: int) -> float:
    """``ln`` of ``S_(n)^- * r_n`` (the record position is the 0-based site)."""
    if n < 2:
        raise DomainError("relocalisation times are defined for n >= 2")
    e = skeleton.record(n)
    return e.s_minus.ln_value + math.log(e.r)


def reloc_time(skeleton, n: int, aux: AuxFunction) -> LogMagnitude:
    """Time ``t_n`` with ``t_n / h(t_n) = S_(n)^- r_n``."""
    return LogMagnitude(aux.solve_t_over_h(reloc_rhs(skeleton, n)))


@dataclass(frozen=True)
class RelocalisationAudit:
    n: int
    ln_t_n: float
    r_prev: int
    r_n: int
    O_n: float
    D_n: LogMagnitude
    R1: list[int]
    R2: list[int]
    divide_by_h: bool
    # counts under the other reading of the level (without or with division by h)
    D_n_alt: LogMagnitude
    R2_alt: list[int]

    @property
    def size(self) -> int:
        return len(self.R1) + len(self.R2)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "ln_t_n": self.ln_t_n,
            "r_prev": self.r_prev,
            "r_n": self.r_n,
            "O_n": self.O_n,
            "ln_D_n": self.D_n.to_json(),
            "R1": self.R1,
            "R2": self.R2,
            "divide_by_h": self.divide_by_h,
            "ln_D_n_alt": self.D_n_alt.to_json(),
            "R2_alt": self.R2_alt,
        }


def audit_R1_R2(src: TrapSource, n: int, aux: AuxFunction, i_cap: int = 1 << 22,
                divide_by_h: bool = True) -> RelocalisationAudit:
    """Sets that can join the two records in the localisation set before ``t_n``."""
    if n < 2:
        raise DomainError("the audit needs n >= 2")
    sk = records_upto(src, n, i_cap)
    prev, cur = sk.record(n - 1), sk.record(n)
    ln_tn = reloc_time(sk, n, aux).ln_value
    ln_h = float(aux.ln_h(ln_tn))
    ch = chain_from(src, prev.r, ln_tn, ln_h, i_cap)
    n_O = _positions_count(ch.last, ch.ln_outer_width, i_cap)
    if n_O > i_cap:
        raise InsufficientLandscapeError(f"outer boundary beyond i_cap={i_cap}", reached=i_cap)
    O_n = ch.last + math.exp(ch.ln_outer_width)
    ln_all = src.ln_traps(0, n_O)
    srt = np.sort(ln_all)
    ln_prev = prev.sigma.ln_value
    ln_D_div = lower_boundary(srt, ln_prev - ln_h)
    ln_D_raw = lower_boundary(srt, ln_prev)
    pos = np.arange(n_O)
    R1 = np.flatnonzero((pos > cur.r) & (ln_all > ln_prev)).tolist()

    def r2(ln_D: float) -> list[int]:
        return np.flatnonzero((ln_all >= ln_D) & (ln_all < ln_prev)).tolist()

    main, alt = (ln_D_div, ln_D_raw) if divide_by_h else (ln_D_raw, ln_D_div)
    return RelocalisationAudit(
        n, ln_tn, prev.r, cur.r, O_n, LogMagnitude(main), R1, r2(main), divide_by_h, LogMagnitude(alt), r2(alt)
    )


# ------------------------------------------------------------------ near records

EPS_NAMES = tuple(f"eps{i}" for i in range(8))


@dataclass(frozen=True)
class FavourableSites:
    n: int
    eps: tuple[float, ...]
    z: list[int]
    ln_sigma_z: list[float]
    ln_Lambda: float  # ln L((1 - eps0) sigma_(n-1))
    r_prev: int
    r_n: int
    ln_sigma_prev: float
    ln_sigma_n: float
    clause_results: dict[str, bool] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.z)

    @property
    def event(self) -> bool:
        return bool(self.clause_results) and all(self.clause_results.values())

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "eps": list(self.eps),
            "z": list(self.z),
            "ln_sigma_z": list(self.ln_sigma_z),
            "ln_Lambda": self.ln_Lambda,
            "r_prev": self.r_prev,
            "r_n": self.r_n,
            "ln_sigma_prev": self.ln_sigma_prev,
            "ln_sigma_n": self.ln_sigma_n,
            "clauses": dict(self.clause_results),
            "event": self.event,
        }


def _near_records(src: TrapSource, z1: int, ln_level: float, count: int, i_cap: int) -> list[int]:
    out: list[int] = []
    pos = z1 + 1
    while len(out) < count:
        nxt = _first_above(src, pos, i_cap, ln_level)
        if nxt is None:
            reached = i_cap if src.length is None else min(i_cap, src.length)
            raise InsufficientLandscapeError(f"only {len(out)} near-records found after site {z1}", reached=reached)
        out.append(nxt)
        pos = nxt + 1
    return out


def near_record_sites(src: TrapSource, n: int, eps0: float, N: int, i_cap: int = 1 << 22) -> FavourableSites:
    """``z_1 = r_{n-1}`` followed by the next ``N - 1`` traps above ``(1 - eps0) sigma_(n-1)``."""
    if n < 2:
        raise DomainError("n must be >= 2")
    if not 0 < eps0 < 1:
        raise DomainError("eps0 must lie in (0, 1)")
    if N < 2:
        raise DomainError("N must be >= 2")
    if src.model is None:
        raise DomainError("near-record sites need the landscape's tail model for Lambda")
    try:
        sk = records_upto(src, n, i_cap)
    except NotFoundError as exc:
        raise InsufficientLandscapeError(str(exc), reached=exc.reached) from exc
    prev, cur = sk.record(n - 1), sk.record(n)
    ln_level = prev.sigma.ln_value + math.log1p(-eps0)
    zs = [prev.r] + _near_records(src, prev.r, ln_level, N - 1, i_cap)
    ln_z = [float(src.ln_traps(z, z + 1)[0]) for z in zs]
    ln_Lam = float(src.model.ln_L(ln_level))
    eps = (eps0,) + (math.nan,) * 7
    return FavourableSites(n, eps, zs, ln_z, ln_Lam, prev.r, cur.r, prev.sigma.ln_value, cur.sigma.ln_value)


def default_eps4(n: int) -> float:
    return 1.0 / (4.0 * math.log(n))


def validate_eps(eps: Sequence[float | None], n: int) -> tuple[float, ...]:
    if len(eps) != 8:
        raise DomainError("expected eight parameters eps0..eps7")
    vals = list(eps)
    if vals[4] is None:
        if n < 2:
            raise DomainError("default eps4 needs n >= 2")
        vals[4] = default_eps4(n)
    for i, v in enumerate(vals):
        if v is None or not 0 < float(v) < 1:
            raise DomainError(f"eps{i} must lie in (0, 1), got {v!r}")
    if not vals[2] < vals[1]:
        # the gap window (1/eps1, 1/eps2) is empty otherwise
        raise DomainError(f"need eps2 < eps1 for a nonempty gap window, got eps1={vals[1]}, eps2={vals[2]}")
    return tuple(float(v) for v in vals)


def _window_sum_below(src: TrapSource, start: int, stop: int, ln_bound: float) -> bool:
    """Whether the traps at ``start .. stop-1`` sum to less than ``exp(ln_bound)``."""
    acc = -math.inf
    if src.length is not None and stop > src.length:
        raise InsufficientLandscapeError(
            f"window up to site {stop - 1} exceeds the {src.length} planted positions", reached=src.length
        )
    for _, block in src.chunks(start, stop, _CHUNK):
        acc = float(np.logaddexp(acc, lse_array(block)))
        if acc >= ln_bound:
            return False
    return acc < ln_bound


def favourable_event(src: TrapSource, n: int, eps: Sequence[float | None], N: int | None = None,
                     i_cap: int = 1 << 22) -> FavourableSites:
    """Near-record sites with every clause of the favourable event evaluated.

    ``eps[4] = None`` selects ``1 / (4 ln n)``.
    """
    e = validate_eps(eps, n)
    if N is None:
        if src.model is None:
            raise DomainError("N must be given for a landscape without a model")
        N = src.model.analytic_N().N
    base = near_record_sites(src, n, e[0], N, i_cap)
    z, lnL = base.z, base.ln_Lambda
    Lam = math.exp(lnL)
    ln_prev = base.ln_sigma_prev
    zN, zN1, z1 = z[-1], z[-2], z[0]
    clauses: dict[str, bool] = {}
    clauses["final_is_record"] = zN == base.r_n
    gap = (zN - zN1) / Lam
    clauses["final_gap"] = 1.0 / e[1] < gap < 1.0 / e[2]
    clauses["cluster_span"] = (zN1 - z1) / Lam < 1.0 / e[3]
    clauses["start_near_origin"] = z1 / Lam < 1.0 / e[4]
    # traps left of z_N other than z_1..z_{N-1}
    ln_left = src.ln_traps(0, zN).copy()
    ln_left[z[:-1]] = -math.inf
    clauses["off_site_mass"] = lse_array(ln_left) < math.log(e[4]) + ln_prev
    clauses["next_record_deep"] = base.ln_sigma_n > ln_prev - math.log(e[5])
    width = Lam / e[6]
    if width > i_cap:
        raise InsufficientLandscapeError(f"right window of width {width:.3g} exceeds i_cap", reached=i_cap)
    stop = zN + int(math.floor(width)) + 1
    clauses["right_window_mass"] = _window_sum_below(src, zN + 1, stop, math.log(e[7]) + ln_prev)
    return FavourableSites(
        n, e, z, base.ln_sigma_z, lnL, base.r_prev, base.r_n, ln_prev, base.ln_sigma_n, clauses
    )


# ------------------------------------------------------------------ closed-form bounds on the event

@dataclass(frozen=True)
class BalanceBounds:
    """Closed-form consequences of the favourable event at the chosen parameters."""

    N: int
    eps: tuple[float, ...]
    balance_lo: float  # bracket for t_n / (Lambda sigma_(n-1))
    balance_hi: float
    final_site_lower: float
    mixing_scaled_upper: float  # for t_mix(8 sqrt(eps0)) / (Lambda sigma_(n-1))
    mixing_applicable: bool  # 2 eps4 <= eps0 <= 1/N
    other_site_lower: float
    other_site_factors: tuple[float, float]
    other_site_applicable: bool  # plus N^2 eps1 <= (1 - eps0) eps0^2 eps3

    @property
    def vacuous(self) -> bool:
        return self.other_site_lower <= 0.0

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def balance_bounds(eps: Sequence[float], N: int) -> BalanceBounds:
    e0, e1, e2, e3, e4, e5, e6, e7 = (float(x) for x in eps)
    lo = 2.0 * (1.0 - e0) / (e1 * N)
    hi = 6.0 * (1.0 / e2 + 1.0 / e3) * N**2
    final = (1.0 - e5 * (e4 + e7) - 6.0 * e5 * max(e1, e6) * (1.0 / e2 + 1.0 / e3) * N**2) / N
    mix = N / (e0**2 * e3)
    mix_ok = 2.0 * e4 <= e0 <= 1.0 / N
    first = (N - 1) / N - N * e1 - e4 / ((N - 1) * (1.0 - e0))
    second = 1.0 / (N - 1) - 3.0 * e0 / (1.0 - e0) - 8.0 * math.sqrt(e0) - N * e1 / ((1.0 - e0) * e0**2 * e3)
    # a product of lower bounds is only a lower bound when both are positive
    other = first * second if (first > 0 and second > 0) else 0.0
    other_ok = mix_ok and N**2 * e1 <= (1.0 - e0) * e0**2 * e3
    return BalanceBounds(N, tuple(eps), lo, hi, final, mix, mix_ok, other, (first, second), other_ok)
