"""Exact quenched laws of the trap walk on finite segments.

The walk at site ``x`` jumps to each existing neighbour at rate
``1/(2 sigma_x)``; an end with a single neighbour therefore holds for a
mean time ``2 sigma_x``.  Reversibility with respect to ``sigma`` makes
``S = Sigma^{1/2} Q Sigma^{-1/2}`` symmetric, and ``-S = B^T B`` for a
bidiagonal ``B`` built from ``1/sqrt(2 sigma)``.

Eigenvalues come from LAPACK's dqds on ``B`` (relative accuracy), and
eigenvectors from twisted factorizations of the ``L D L^T`` form of
``B^T B``.  Both steps avoid the absolute-accuracy loss of dense
tridiagonal solvers, which is fatal when traps span hundreds of decades.

Times are rescaled: traps are divided by ``c = time_scale`` so that their
logs are centred at zero, and a user time ``t`` becomes ``t / c``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, optimize

from ._lapack import bidiagonal_singular_values
from .errors import DomainError, InsufficientLandscapeError, NumericalQualityError, RangeOverflowError
from .landscape import TrapSource
from .logreal import LogMagnitude, lse_array

#: widest admissible spread of ln(sigma) inside one segment
LN_RANGE_MAX = 1300.0
#: negative probabilities beyond this are hard errors
NEGATIVE_TOL = 1e-10
#: largest reported renormalisation
RENORM_TOL = 1e-9
#: relative eigenvalue gap below which vectors are treated as a cluster
CLUSTER_RELGAP = 1e-4


class Boundary(str, enum.Enum):
    REFLECTING = "reflecting"
    ABSORBING = "absorbing"


def _ln_time(t) -> float:
    if isinstance(t, LogMagnitude):
        return t.ln_value
    t = float(t)
    if t < 0 or math.isnan(t):
        raise DomainError(f"time must be nonnegative, got {t}")
    return math.log(t) if t > 0 else -math.inf


def _as_ln_array(traps) -> np.ndarray:
    if len(traps) and isinstance(traps[0], LogMagnitude):
        arr = np.array([x.ln_value for x in traps], dtype=float)
    else:
        arr = np.asarray(traps, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise DomainError("traps must be finite positive magnitudes")
    return arr


@dataclass(frozen=True, eq=False)
class Segment:
    """Sites ``a .. b`` with traps; an absorbing end removes that site from the state space."""

    a: int
    b: int
    ln_sigma: np.ndarray  # original logs for sites a..b
    left: Boundary
    right: Boundary
    ln_time_scale: float
    sigma: np.ndarray  # rescaled traps of the transient states

    @property
    def time_scale(self) -> float:
        return math.exp(self.ln_time_scale) if self.ln_time_scale < 709 else math.inf

    @property
    def states(self) -> np.ndarray:
        lo = self.a + (self.left is Boundary.ABSORBING)
        hi = self.b - (self.right is Boundary.ABSORBING)
        return np.arange(lo, hi + 1)

    @property
    def fully_reflecting(self) -> bool:
        return self.left is Boundary.REFLECTING and self.right is Boundary.REFLECTING

    @property
    def ln_range(self) -> float:
        return float(np.ptp(np.log(self.sigma)))

    def index(self, x: int) -> int:
        st = self.states
        if not st[0] <= x <= st[-1]:
            raise DomainError(f"site {x} is not a transient state of [{self.a}, {self.b}]")
        return int(x - st[0])

    def symmetric_tridiagonal(self) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal and off-diagonal of the symmetrised generator."""
        s = self.sigma
        n = s.size
        nbrs = np.full(n, 2.0)
        if self.left is Boundary.REFLECTING:
            nbrs[0] -= 1
        if self.right is Boundary.REFLECTING:
            nbrs[-1] -= 1
        diag = -nbrs / (2.0 * s)
        r = np.sqrt(s)
        off = 0.5 / r[:-1] / r[1:]
        return diag, off


def make_segment(traps, a: int = 0, left: Boundary | str = "reflecting", right: Boundary | str = "reflecting") -> Segment:
    ln_sigma = _as_ln_array(traps)
    left, right = Boundary(left), Boundary(right)
    n_sites = ln_sigma.size
    if n_sites < 2:
        raise DomainError("a segment needs at least two sites")
    lo = int(left is Boundary.ABSORBING)
    hi = n_sites - int(right is Boundary.ABSORBING)
    if hi - lo < 1:
        raise DomainError("no transient states left after removing absorbing ends")
    live = ln_sigma[lo:hi]
    spread = float(live.max() - live.min())
    if spread > LN_RANGE_MAX:
        raise RangeOverflowError(
            f"trap logs span [{live.min():.6g}, {live.max():.6g}] (width {spread:.6g}); "
            f"the solver admits a width of at most {LN_RANGE_MAX}"
        )
    shift = 0.5 * float(live.max() + live.min())
    sigma = np.exp(live - shift)
    return Segment(a, a + n_sites - 1, ln_sigma.copy(), left, right, shift, sigma)


# ------------------------------------------------------------------ spectral core

def _bidiagonal(seg: Segment) -> tuple[np.ndarray, np.ndarray]:
    """Upper bidiagonal ``B`` with ``B^T B = -S`` (after a possible mirror)."""
    c = 1.0 / np.sqrt(2.0 * seg.sigma)
    n = c.size
    L, R = seg.left is Boundary.ABSORBING, seg.right is Boundary.ABSORBING
    if L and R:
        # Givens QR of the (n+1) x n edge matrix; additions only, no cancellation
        d = np.empty(n)
        e = np.empty(n - 1)
        alpha = c[0]
        for k in range(n - 1):
            rho = math.hypot(alpha, c[k])
            d[k] = rho
            e[k] = -c[k] * c[k + 1] / rho
            alpha = alpha * c[k + 1] / rho
        d[n - 1] = math.hypot(alpha, c[n - 1])
        return d, e
    # a left-absorbing segment is handled as its mirror image
    if L:
        c = c[::-1]
    d = -c.copy()
    if not (L or R):
        d[-1] = 0.0
    return d, c[1:].copy()


def _reflecting_singular_values(c: np.ndarray) -> np.ndarray:
    """Singular values for a reflecting segment, the exact zero first.

    dqds can flush tiny singular values to zero when the bidiagonal carries an
    exact zero pivot, so the zero row is removed by Givens rotations first.
    """
    m = c.size - 1
    d = np.empty(m)
    e = np.empty(max(m - 1, 0))
    a = c[0]
    for k in range(m):
        r = math.hypot(a, c[k + 1])
        d[k] = r
        if k < m - 1:
            e[k] = c[k + 1] * c[k + 1] / r
            a = a * c[k + 1] / r
    return np.concatenate(([0.0], bidiagonal_singular_values(d, e)))


def _singular_values(seg: Segment, d: np.ndarray, e: np.ndarray) -> np.ndarray:
    if seg.fully_reflecting:
        return _reflecting_singular_values(1.0 / np.sqrt(2.0 * seg.sigma))
    return bidiagonal_singular_values(d, e)


def _twisted(d: np.ndarray, e: np.ndarray, mu: np.ndarray, twist: np.ndarray | None = None, _retry: int = 0):
    """Eigenvectors of ``B^T B = L D L^T`` at shifts ``mu`` by twisted factorizations.

    Stationary and progressive qd transforms run over the index, vectorised
    across shifts.  Only ``d^2``, ``d e`` and ``e^2`` enter, so neighbouring
    traps far apart in magnitude do not overflow ``L^2``.  Returns
    normalised vectors (columns), the twist indices used and ``|gamma|``.
    """
    n, m = d.size, mu.size
    D = d * d
    DL = d[:-1] * e
    E2 = e * e
    s = np.empty((n, m))
    Lp = np.empty((max(n - 1, 0), m))
    Um = np.empty((max(n - 1, 0), m))
    p = np.empty((n, m))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        s[0] = -mu
        for i in range(n - 1):
            Dp = D[i] + s[i]
            Lp[i] = DL[i] / Dp
            s[i + 1] = E2[i] * (s[i] / Dp) - mu
        p[n - 1] = D[n - 1] - mu
        for i in range(n - 2, -1, -1):
            Dm = E2[i] + p[i + 1]
            Um[i] = DL[i] / Dm
            p[i] = p[i + 1] * (D[i] / Dm) - mu
        gam = s + p + mu[None, :]
    bad = ~(np.all(np.isfinite(s), axis=0) & np.all(np.isfinite(p), axis=0))
    if np.any(bad) and _retry < 8:
        # an exactly zero pivot (exact structural symmetry); shift by a few ulps
        mu2 = mu[bad] * (1.0 + 4.0 * (_retry + 1) * np.finfo(float).eps)
        Zb, tb, gb = _twisted(d, e, mu2, None if twist is None else twist[bad], _retry + 1)
        Z, tw, ag = _twisted(d, e, mu[~bad], None if twist is None else twist[~bad], _retry + 1)
        Zall = np.empty((n, m))
        tall = np.empty(m, dtype=np.int64)
        gall = np.empty((n, m))
        Zall[:, bad], Zall[:, ~bad] = Zb, Z
        tall[bad], tall[~bad] = tb, tw
        gall[:, bad], gall[:, ~bad] = gb, ag
        return Zall, tall, gall
    agam = np.where(np.isfinite(gam), np.abs(gam), np.inf)
    if twist is None:
        twist = np.argmin(agam, axis=0)
    Z = np.zeros((n, m))
    cols = np.arange(m)
    Z[twist, cols] = 1.0
    with np.errstate(invalid="ignore", over="ignore"):
        for i in range(n - 2, -1, -1):
            sel = i < twist
            Z[i, sel] = -Lp[i, sel] * Z[i + 1, sel]
        for i in range(n - 1):
            sel = i >= twist
            Z[i + 1, sel] = -Um[i, sel] * Z[i, sel]
    Z = np.where(np.isfinite(Z), Z, 0.0)
    Z /= np.linalg.norm(Z, axis=0)
    return Z, twist, agam


def _local_minima(a: np.ndarray) -> np.ndarray:
    left = np.concatenate(([np.inf], a[:-1]))
    right = np.concatenate((a[1:], [np.inf]))
    idx = np.flatnonzero((a <= left) & (a <= right) & np.isfinite(a))
    return idx[np.argsort(a[idx])]


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigenpairs of the symmetrised generator (rescaled time units)."""

    segment: Segment
    eigenvalues: np.ndarray  # nonincreasing, <= 0
    eigenvectors: np.ndarray  # orthonormal columns
    scaling: np.ndarray  # sqrt of the rescaled traps
    truncation_bound: float | None = None
    mass_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mass_weights", self.eigenvectors.T @ self.scaling)

    @property
    def ln_time_scale(self) -> float:
        return self.segment.ln_time_scale

    def check(self) -> dict:
        """Residual and orthogonality diagnostics."""
        diag, off = self.segment.symmetric_tridiagonal()
        V, lam = self.eigenvectors, self.eigenvalues
        SV = diag[:, None] * V
        SV[:-1] += off[:, None] * V[1:]
        SV[1:] += off[:, None] * V[:-1]
        res = np.max(np.abs(SV - V * lam[None, :]))
        norm_inf = float(np.max(np.abs(diag) + np.concatenate(([0.0], off)) + np.concatenate((off, [0.0]))))
        orth = float(np.max(np.abs(V.T @ V - np.eye(V.shape[1]))))
        return {"residual": float(res), "norm_inf": norm_inf, "relative_residual": float(res) / norm_inf, "orthogonality": orth}

    def to_json(self) -> dict:
        seg = self.segment
        return {
            "a": seg.a,
            "b": seg.b,
            "left": seg.left.value,
            "right": seg.right.value,
            "ln_time_scale": seg.ln_time_scale,
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "truncation_bound": self.truncation_bound,
        }


def build(traps, a: int = 0, left: Boundary | str = "reflecting", right: Boundary | str = "reflecting") -> SpectralDecomposition:
    """Segment plus spectral decomposition of its generator."""
    seg = make_segment(traps, a, left, right)
    n = seg.sigma.size
    d, e = _bidiagonal(seg)
    sv = _singular_values(seg, d, e)
    mu = np.sort(sv * sv)  # ascending, so eigenvalues -mu are nonincreasing
    V = np.empty((n, n))
    start = 0
    if seg.fully_reflecting:
        mu[0] = 0.0
        w = np.sqrt(seg.sigma)
        V[:, 0] = w / np.linalg.norm(w)
        start = 1
    if n > start:
        Z, twist, agam = _twisted(d, e, mu[start:])
        Z = _fix_clusters(d, e, mu[start:], Z, twist, agam)
        if seg.left is Boundary.ABSORBING and seg.right is Boundary.REFLECTING:
            Z = Z[::-1]
        V[:, start:] = Z
    return SpectralDecomposition(seg, -mu, V, np.sqrt(seg.sigma))


def _member_candidates(d, e, mu, c, agam, limit):
    tw = _local_minima(agam[:, c])[:limit]
    if not tw.size:
        return np.empty((d.size, 0)), np.empty(0)
    Zc, _, _ = _twisted(d, e, np.full(tw.size, mu[c]), tw)
    # residual of a twisted vector is |gamma_r| / ||z|| with z_r = 1
    res = agam[tw, c] * np.abs(Zc[tw, np.arange(tw.size)])
    order = np.argsort(res)
    return Zc[:, order], res[order]


def _greedy_cluster_basis(d, e, mu, Z, members, agam) -> np.ndarray | None:
    """One twisted vector per member, each nearly orthogonal to those already taken.

    The final symmetric orthogonalisation only mixes vectors by amounts of
    the order of their overlaps, so tiny components keep their relative
    accuracy (a full rotation would not).
    """
    size = members.size
    chosen: list[np.ndarray] = []
    for c in members:
        options = [Z[:, c]]
        Zc, res = _member_candidates(d, e, mu, c, agam, 4 * size + 8)
        options.extend(Zc[:, i] for i in range(res.size) if res[i] <= 1e-13 * mu[c])
        for v in options:
            if all(abs(float(v @ u)) <= 1e-6 for u in chosen):
                chosen.append(v)
                break
        else:
            return None
    C = np.column_stack(chosen)
    w, U = np.linalg.eigh(C.T @ C)
    return C @ ((U / np.sqrt(w)) @ U.T)


def _ritz_cluster_basis(d, e, mu, Z, members, agam) -> np.ndarray:
    """Orthonormal cluster basis rotated onto Ritz vectors.

    Independent ordinary vectors are kept, the span is completed from
    twists at other local minima by column-pivoted QR, and a Rayleigh-Ritz
    step through the bidiagonal factor (no cancellation) diagonalises it.
    """
    size = members.size
    _, R, piv = linalg.qr(Z[:, members], mode="economic", pivoting=True)
    diagR = np.abs(np.diag(R))
    r = int(np.sum(diagR > 1e-6 * diagR[0]))
    Q, _ = np.linalg.qr(Z[:, members][:, piv[:r]])
    if r < size:
        C = np.concatenate([_member_candidates(d, e, mu, c, agam, 4 * size + 8)[0] for c in members], axis=1)
        C -= Q @ (Q.T @ C)
        _, _, piv2 = linalg.qr(C, mode="economic", pivoting=True)
        Q, _ = np.linalg.qr(np.concatenate([Q, C[:, piv2[: size - r]]], axis=1))
        Q, _ = np.linalg.qr(Q)
    BQ = d[:, None] * Q
    BQ[:-1] += e[:, None] * Q[1:]
    H = BQ.T @ BQ
    _, W = np.linalg.eigh(0.5 * (H + H.T))
    return Q @ W


def _fix_clusters(d, e, mu, Z, twist, agam) -> np.ndarray:
    """Repair eigenvectors inside tight eigenvalue clusters."""
    m = mu.size
    if m < 2:
        return Z
    rel = np.diff(mu) / np.maximum(mu[1:], np.finfo(float).tiny)
    k = 0
    while k < m - 1:
        if rel[k] >= CLUSTER_RELGAP:
            k += 1
            continue
        j = k
        while j < m - 1 and rel[j] < CLUSTER_RELGAP:
            j += 1
        members = np.arange(k, j + 1)
        C = Z[:, members]
        G = C.T @ C
        overlap = float(np.max(np.abs(G - np.eye(members.size))))
        if overlap <= 1e-13:
            k = j + 1
            continue
        if overlap <= 1e-6:
            # distinct vectors that lost a little orthogonality: mix by their overlaps only
            w, U = np.linalg.eigh(G)
            Z[:, members] = C @ ((U / np.sqrt(w)) @ U.T)
            k = j + 1
            continue
        picked = _greedy_cluster_basis(d, e, mu, Z, members, agam)
        if picked is not None:
            Z[:, members] = picked
        else:
            Z[:, members] = _ritz_cluster_basis(d, e, mu, Z, members, agam)
        k = j + 1
    return Z


# ------------------------------------------------------------------ laws

@dataclass(frozen=True)
class Distribution:
    probs: np.ndarray
    states: np.ndarray
    raw_total: float
    clamped: float

    def at(self, x: int) -> float:
        return float(self.probs[int(x - self.states[0])])


def _weights(dec: SpectralDecomposition, ln_t: float) -> np.ndarray:
    """``exp(lambda_k t)`` in rescaled time, safe for huge ``t``."""
    lam = dec.eigenvalues
    if ln_t == -math.inf:
        return np.ones_like(lam)
    ln_tr = ln_t - dec.ln_time_scale
    with np.errstate(divide="ignore", over="ignore"):
        expo = np.where(lam < 0, -np.exp(np.minimum(np.log(-np.where(lam < 0, lam, -1.0)) + ln_tr, 700.0)), 0.0)
    return np.exp(expo)


def _one_minus_weights(dec: SpectralDecomposition, ln_t: float) -> np.ndarray:
    lam = dec.eigenvalues
    if ln_t == -math.inf:
        return np.zeros_like(lam)
    ln_tr = ln_t - dec.ln_time_scale
    with np.errstate(divide="ignore", over="ignore"):
        expo = np.where(lam < 0, -np.exp(np.minimum(np.log(-np.where(lam < 0, lam, -1.0)) + ln_tr, 700.0)), 0.0)
    return -np.expm1(expo)


def distribution_at(dec: SpectralDecomposition, start: int, t, renormalize: bool | None = None) -> Distribution:
    """Law of the walk at time ``t`` started from site ``start``.

    Negative entries below ``-1e-10`` raise; smaller ones are clamped.  A
    fully reflecting segment is renormalised (the deficit is reported); an
    absorbing segment returns the sub-probability of survival.
    """
    seg = dec.segment
    ln_t = _ln_time(t)
    x = seg.index(start)
    if ln_t == -math.inf:
        p = np.zeros(seg.sigma.size)
        p[x] = 1.0
        return Distribution(p, seg.states, 1.0, 0.0)
    w = _weights(dec, ln_t)
    V = dec.eigenvectors
    row = (w * V[x]) @ V.T
    p = row * dec.scaling / dec.scaling[x]
    low = float(p.min()) if p.size else 0.0
    if low < -NEGATIVE_TOL:
        raise NumericalQualityError(f"negative probability {low:.3e} at t=exp({ln_t:.6g})")
    clamped = float(-np.sum(p[p < 0]))
    p = np.maximum(p, 0.0)
    total = float(p.sum())
    if renormalize is None:
        renormalize = seg.fully_reflecting
    if renormalize:
        if abs(total - 1.0) > RENORM_TOL:
            raise NumericalQualityError(f"row sum {total!r} deviates from 1 by more than {RENORM_TOL}")
        p = p / total
    return Distribution(p, seg.states, total, clamped)


def transition_matrix(dec: SpectralDecomposition, t) -> np.ndarray:
    """Full matrix ``p_t(x, y)`` without clamping (for structural checks)."""
    w = _weights(dec, _ln_time(t))
    V = dec.eigenvectors
    K = (V * w[None, :]) @ V.T
    return K * dec.scaling[None, :] / dec.scaling[:, None]


def stationary(seg: Segment) -> np.ndarray:
    """``sigma / sum(sigma)`` computed in log space."""
    ln_s = seg.ln_sigma[seg.states - seg.a]
    return np.exp(ln_s - lse_array(ln_s))


def hitting_cdf(dec: SpectralDecomposition, start: int, t) -> float:
    """``P(tau <= t)`` for the absorbing end(s) of ``dec``'s segment."""
    seg = dec.segment
    if seg.fully_reflecting:
        raise DomainError("hitting_cdf needs at least one absorbing end")
    x = seg.index(start)
    a_k = dec.eigenvectors[x] * dec.mass_weights / dec.scaling[x]
    val = float(np.dot(_one_minus_weights(dec, _ln_time(t)), a_k))
    if val < -NEGATIVE_TOL or val > 1 + NEGATIVE_TOL:
        raise NumericalQualityError(f"hitting probability {val!r} outside [0, 1]")
    return min(max(val, 0.0), 1.0)


def expected_hitting(traps, a: int, x: int, b: int) -> LogMagnitude:
    """``E_x[tau_b]`` for the walk reflected at ``a``: ``sum_{a<=z<b} 2 min(b-z, b-x) sigma_z``.

    ``traps`` holds sites ``a .. b-1`` (extra entries are ignored).
    """
    if not a <= x <= b:
        raise DomainError("need a <= x <= b")
    if x == b:
        return LogMagnitude.zero()
    ln_s = _as_ln_array(traps)[: b - a]
    z = np.arange(a, b)
    wts = 2.0 * np.minimum(b - z, b - x)
    return LogMagnitude(lse_array(np.log(wts) + ln_s))


# ------------------------------------------------------------------ time searches

def _solve_ln_time(f, ln_guess: float, target: float, xtol: float = 1e-12) -> float:
    """Root in ``ln t`` of a nondecreasing ``f(ln t) - target``."""
    lo, hi = ln_guess - 4.0, ln_guess + 4.0
    step = 4.0
    while f(lo) > target:
        step *= 2
        lo -= step
        if lo < -2000:
            raise NumericalQualityError("failed to bracket the time from below")
    step = 4.0
    while f(hi) < target:
        step *= 2
        hi += step
        if hi > 2000:
            raise NumericalQualityError("failed to bracket the time from above")
    return optimize.brentq(lambda x: f(x) - target, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=400)


@dataclass(frozen=True)
class BalanceResult:
    ln_t: float
    cdf: float
    target: float
    residual: float

    @property
    def t(self) -> float:
        return math.exp(self.ln_t)


def balance_time_segment(traps_0_to_zN, N: int) -> BalanceResult:
    """Time at which the walk from 0 has hit ``z_N`` with probability ``1/N``.

    ``traps_0_to_zN`` are the traps at sites ``0 .. z_N``.
    """
    if N < 1:
        raise DomainError("N must be positive")
    ln_s = _as_ln_array(traps_0_to_zN)
    zN = ln_s.size - 1
    if zN < 1:
        raise DomainError("z_N must be at least 1")
    dec = build(ln_s, 0, "reflecting", "absorbing")
    target = 1.0 / N
    ln_mean = expected_hitting(ln_s, 0, 0, zN).ln_value
    f = lambda x: hitting_cdf(dec, 0, LogMagnitude(x))  # noqa: E731
    x = _solve_ln_time(f, ln_mean, target, xtol=1e-14)
    # polish: the cdf is smooth in ln t, so a secant step tightens the residual
    c = f(x)
    if abs(c - target) > 1e-10:
        h = 1e-7
        slope = (f(x + h) - f(x - h)) / (2 * h)
        if slope > 0:
            x = x - (c - target) / slope
            c = f(x)
    return BalanceResult(x, c, target, abs(c - target))


def balance_time(src: TrapSource, sites) -> BalanceResult:
    """Balance time for near-record sites (any object with ``z``)."""
    zN = sites.z[-1]
    return balance_time_segment(src.ln_traps(0, zN + 1), len(sites.z))


def l1_distance_max(dec: SpectralDecomposition, starts: Sequence[int], ln_t: float, pi: np.ndarray) -> float:
    worst = 0.0
    for s in starts:
        p = distribution_at(dec, s, LogMagnitude(ln_t) if ln_t > -math.inf else 0.0).probs
        worst = max(worst, float(np.sum(np.abs(p - pi))))
    return worst


@dataclass(frozen=True)
class MixingResult:
    ln_t: float
    distance: float
    monotone_on_grid: bool
    method: str

    @property
    def t(self) -> float:
        return math.exp(self.ln_t) if self.ln_t > -math.inf else 0.0


def mixing_time_restricted(traps_0_to_zN, starts: Sequence[int], eps: float, replace_last: float | None = None,
                           grid_points: int = 121) -> MixingResult:
    """Infimum of ``t`` with worst-start L1 distance to equilibrium ``<= eps``.

    The segment is ``[0, z_N]`` reflecting at both ends; ``replace_last``
    (a log magnitude) substitutes the trap at ``z_N``.
    """
    if not 0 < eps < 2:
        raise DomainError("eps must lie in (0, 2)")
    ln_s = _as_ln_array(traps_0_to_zN).copy()
    if replace_last is not None:
        ln_s[-1] = float(replace_last)
    dec = build(ln_s, 0, "reflecting", "reflecting")
    pi = stationary(dec.segment)
    d0 = max(2.0 * (1.0 - float(pi[s])) for s in starts)
    if d0 <= eps:
        return MixingResult(-math.inf, d0, True, "initial")
    dist = lambda x: l1_distance_max(dec, starts, x, pi)  # noqa: E731
    # grid over the relaxation scales of the segment
    lam = -dec.eigenvalues[dec.eigenvalues < 0]
    lo = float(np.log(1.0 / lam.max())) + dec.ln_time_scale - 6.0
    hi = float(np.log(1.0 / lam.min())) + dec.ln_time_scale + 6.0 + math.log(max(1.0, math.log(4.0 / eps)))
    grid = np.linspace(lo, hi, grid_points)
    vals = np.array([dist(x) for x in grid])
    monotone = bool(np.all(np.diff(vals) <= 1e-12))
    below = np.flatnonzero(vals <= eps)
    if below.size == 0:
        raise NumericalQualityError("distance never dropped below eps on the search grid")
    k = int(below[0])
    if k == 0:
        x = _solve_ln_time(lambda y: -dist(y), grid[0] - 4.0, -eps)
        return MixingResult(x, dist(x), monotone, "bisection")
    a, b = grid[k - 1], grid[k]
    x = optimize.brentq(lambda y: dist(y) - eps, a, b, xtol=1e-12, rtol=4 * np.finfo(float).eps)
    return MixingResult(x, dist(x), monotone, "bisection" if monotone else "grid-scan")


# ------------------------------------------------------------------ half-line questions

@dataclass(frozen=True)
class Truncation:
    B: int
    ln_bound: float

    @property
    def bound(self) -> float:
        return math.exp(self.ln_bound) if self.ln_bound < 709 else math.inf


def escape_bound(ln_sigma_prefix: np.ndarray, B: int, ln_t: float) -> float:
    """``ln min_{z<B} t / (2 (B - z) sigma_z)``: a bound on ``P_0(tau_B <= t)``."""
    z = np.arange(B)
    vals = ln_t - math.log(2.0) - np.log(B - z) - ln_sigma_prefix[:B]
    return float(vals.min())


def choose_truncation(src: TrapSource, ln_t: float, budget: float = 1e-8, B_max: int = 6000) -> Truncation:
    """Smallest wall position whose escape bound is within ``budget``."""
    ln_budget = math.log(budget)
    n = 256
    best = math.inf
    while True:
        n_eff = min(n, B_max)
        if src.length is not None:
            n_eff = min(n_eff, src.length)
        ln_s = src.ln_traps(0, n_eff)
        need = ln_t - math.log(2.0) - ln_budget - ln_s
        reach = np.arange(n_eff) + np.ceil(np.exp(np.minimum(need, 700.0)))
        best = min(best, float(reach.min()))
        if best <= min(n_eff, B_max):
            B = max(int(best), 1)
            if src.length is not None and B + 1 > src.length:
                raise InsufficientLandscapeError("planted landscape too short for the truncation wall", reached=n_eff)
            ln_all = src.ln_traps(0, B + 1)
            return Truncation(B, escape_bound(ln_all, B, ln_t))
        if n_eff >= B_max:
            raise RangeOverflowError(
                f"time exp({ln_t:.6g}) needs a wall beyond {B_max} sites (estimate {best:.3g})"
            )
        if src.length is not None and n_eff >= src.length:
            raise InsufficientLandscapeError("planted landscape too short for the truncation wall", reached=n_eff)
        n *= 2


@dataclass(frozen=True)
class FavouredMass:
    ln_t: float
    sup_mass: float
    argmax: int
    gamma_mass: float | None
    truncation_error: float
    B: int


def half_line_decomposition(src: TrapSource, B: int) -> SpectralDecomposition:
    return build(src.ln_traps(0, B + 1), 0, "reflecting", "reflecting")


def favoured_mass(src: TrapSource, t, aux=None, gamma_set: Sequence[int] | None = None,
                  budget: float = 1e-8, B_max: int = 6000, dec: SpectralDecomposition | None = None) -> FavouredMass:
    """Largest single-site mass at time ``t`` for the walk from 0 on the half-line.

    The half-line is cut at a reflecting wall ``B`` whose escape bound is at
    most ``budget``; the bound is returned as ``truncation_error``.  When
    ``gamma_set`` is omitted and ``aux`` is given, the localisation set is
    built to report its mass.
    """
    ln_t = _ln_time(t)
    if dec is None:
        tr = choose_truncation(src, ln_t, budget, B_max)
        dec = half_line_decomposition(src, tr.B)
    B = dec.segment.b
    err = math.exp(escape_bound(dec.segment.ln_sigma, B, ln_t))
    p = distribution_at(dec, 0, LogMagnitude(ln_t) if ln_t > -math.inf else 0.0).probs
    k = int(np.argmax(p))
    if gamma_set is None and aux is not None:
        from .localise import build_snapshot

        gamma_set = build_snapshot(src, ln_t, aux).gamma_set
    gmass = None
    if gamma_set is not None:
        gs = [g for g in gamma_set if g <= B]
        gmass = float(np.sum(p[gs])) if gs else 0.0
    return FavouredMass(ln_t, float(p[k]), k, gmass, err, B)


# ------------------------------------------------------------------ Monte Carlo

@dataclass
class MCHits:
    times: np.ndarray
    hit: np.ndarray
    occupation: np.ndarray | None
    steps: int


def _rates_setup(ln_sigma: np.ndarray):
    shift = 0.5 * float(ln_sigma.max() + ln_sigma.min())
    return np.exp(ln_sigma - shift), shift


def mc_hitting(traps, start: int, target: int, rng: np.random.Generator, n_paths: int,
               a: int = 0, horizon: float | None = None, occupation_site: int | None = None,
               max_steps: int = 10**7) -> MCHits:
    """Simulate ``tau_target`` for the walk on ``[a, target]`` reflected at ``a``.

    Holding times are exponential with mean ``sigma_x`` in the interior and
    ``2 sigma_a`` at the reflecting end.  Returns hitting times (``inf`` when
    the optional horizon passes first) and, optionally, the time spent at
    ``occupation_site`` before hitting.
    """
    ln_s = _as_ln_array(traps)
    if not a <= start <= target:
        raise DomainError("need a <= start <= target")
    sig, shift = _rates_setup(ln_s[: target - a])
    scale = math.exp(shift)
    pos = np.full(n_paths, start - a, dtype=np.int64)
    tim = np.zeros(n_paths)
    occ = np.zeros(n_paths) if occupation_site is not None else None
    active = pos < target - a
    steps = 0
    hz = math.inf if horizon is None else horizon / scale
    while np.any(active):
        idx = np.flatnonzero(active)
        x = pos[idx]
        at_wall = x == 0
        mean = np.where(at_wall, 2.0 * sig[x], sig[x])
        hold = rng.exponential(1.0, idx.size) * mean
        if occ is not None:
            occ[idx[x == occupation_site - a]] += hold[x == occupation_site - a]
        tim[idx] += hold
        step = np.where(at_wall, 1, np.where(rng.random(idx.size) < 0.5, -1, 1))
        pos[idx] = x + step
        done = (pos[idx] == target - a) | (tim[idx] > hz)
        active[idx[done]] = False
        steps += idx.size
        if steps > max_steps:
            raise NumericalQualityError(f"Monte Carlo step budget {max_steps} exceeded ({int(active.sum())} paths left)")
    hit = pos == target - a
    times = np.where(hit & (tim <= hz), tim * scale, np.inf)
    return MCHits(times, hit, occ * scale if occ is not None else None, steps)


def mc_endpoints(src_or_traps, start: int, t: float, rng: np.random.Generator, n_paths: int,
                 reflect_right: int | None = None, max_steps: int = 10**8) -> np.ndarray:
    """Positions at time ``t`` of independent walks on the half-line.

    ``src_or_traps`` may be a landscape (grown on demand: a walk cannot pass
    the position equal to its number of jumps) or an array of trap logs for a
    segment ``[0, len-1]``.  ``reflect_right`` puts a wall at that site.
    """
    if isinstance(src_or_traps, TrapSource):
        src = src_or_traps
        ln_s = src.ln_traps(0, max(start + 2, 64))
    else:
        src = None
        ln_s = _as_ln_array(src_or_traps)
        if reflect_right is None:
            reflect_right = ln_s.size - 1
    pos = np.full(n_paths, start, dtype=np.int64)
    tim = np.zeros(n_paths)
    active = np.ones(n_paths, dtype=bool)
    steps = 0
    while np.any(active):
        idx = np.flatnonzero(active)
        x = pos[idx]
        need = int(x.max()) + 1
        if need > ln_s.size:
            if src is None:
                raise InsufficientLandscapeError("segment exhausted", reached=ln_s.size)
            ln_s = src.ln_traps(0, max(need, 2 * ln_s.size))
        left_wall = x == 0
        right_wall = (x == reflect_right) if reflect_right is not None else np.zeros_like(left_wall)
        single = left_wall | right_wall
        with np.errstate(over="ignore"):
            # holds beyond the float range simply outlast t
            mean = np.exp(ln_s[x]) * np.where(single, 2.0, 1.0)
        hold = rng.exponential(1.0, idx.size) * mean
        finish = tim[idx] + hold > t
        active[idx[finish]] = False
        mv = ~finish
        i2 = idx[mv]
        tim[i2] += hold[mv]
        coin = rng.random(i2.size) < 0.5
        step = np.where(left_wall[mv], 1, np.where(right_wall[mv], -1, np.where(coin, -1, 1)))
        pos[i2] = x[mv] + step
        steps += idx.size
        if steps > max_steps:
            raise NumericalQualityError(f"Monte Carlo step budget {max_steps} exceeded")
    return pos


def uniformization(traps, start: int, t: float, tol: float = 1e-15) -> np.ndarray:
    """Reflecting-segment law by uniformisation (truncated Poisson sum).

    Only suitable when ``Lambda t`` is moderate; used as an independent check.
    """
    sig = np.exp(_as_ln_array(traps))
    n = sig.size
    rate_out = np.full(n, 1.0) / sig
    rate_out[0] = 1.0 / (2 * sig[0])
    rate_out[-1] = 1.0 / (2 * sig[-1])
    Lam = float(rate_out.max())
    up = np.zeros(n)
    dn = np.zeros(n)
    up[:-1] = 1.0 / (2 * sig[:-1]) / Lam
    dn[1:] = 1.0 / (2 * sig[1:]) / Lam
    stay = 1.0 - up - dn
    v = np.zeros(n)
    v[start] = 1.0
    lt = Lam * t
    # Poisson weights in log space; truncate once the remaining tail is below tol
    from scipy.stats import poisson

    kmax = int(poisson.isf(tol, lt)) + 10 if lt > 0 else 0
    out = np.zeros(n)
    ln_w = -lt
    for k in range(kmax + 1):
        if k:
            ln_w += math.log(lt) - math.log(k)
            nv = v * stay
            nv[1:] += v[:-1] * up[:-1]
            nv[:-1] += v[1:] * dn[1:]
            v = nv
        out += math.exp(ln_w) * v
    return out


def restricted_mixing_time(src: TrapSource, sites, eps: float) -> MixingResult:
    """Mixing time on ``[0, z_N]`` from ``z_1 .. z_{N-1}`` with the last trap lowered to ``eps4 sigma_(n-1)``."""
    zN = sites.z[-1]
    ln_last = math.log(sites.eps[4]) + sites.ln_sigma_prev
    return mixing_time_restricted(src.ln_traps(0, zN + 1), sites.z[:-1], eps, replace_last=ln_last)
