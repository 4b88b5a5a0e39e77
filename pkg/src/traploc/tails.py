"""Slowly varying tail families and the auxiliary scale function.

A trap law is described by ``L(u) = 1 / P(sigma > u)``.  Every evaluation
works on natural logarithms so that depths such as ``exp(n**(1/gamma))``
stay representable.  Functions accept scalars or numpy arrays.

Families
--------
stretched-log  ``L(u) = exp((ln(1+u))**gamma)`` with ``0 < gamma < 1``
log            ``L(u) = (1 + ln(1+u))**gamma``
double-log     ``L(u) = (1 + ln(1 + ln(1+u)))**gamma``

``g`` is the logarithmic derivative ``u L'(u) / L(u)`` and ``d = g o L^{-1}``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError, RangeOverflowError
from .logreal import LN_FLOAT_MAX, LogMagnitude, log1mexp, log_expm1, softplus


class Family(str, enum.Enum):
    STRETCHED_LOG = "stretched-log"
    LOG = "log"
    DOUBLE_LOG = "double-log"


def _out(x):
    return x if np.ndim(x) else float(x)


def _sigmoid_from_log(ln_u):
    """``u / (1 + u)`` from ``ln u``."""
    return np.exp(ln_u - softplus(ln_u))


@dataclass(frozen=True)
class NInfo:
    """Localisation count with the two boundary-case flags."""

    N: int
    diverges_a: bool
    converges_b: bool

    @property
    def boundary_excluded(self) -> bool:
        return self.diverges_a and self.converges_b


@dataclass(frozen=True)
class TailModel:
    family: Family
    gamma: float

    def __post_init__(self) -> None:
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        g = float(self.gamma)
        if not (g > 0 and math.isfinite(g)):
            raise DomainError(f"gamma must be positive, got {self.gamma!r}")
        if fam is Family.STRETCHED_LOG and not g < 1:
            raise DomainError(f"stretched-log needs gamma in (0, 1), got {g}")
        object.__setattr__(self, "gamma", g)

    @property
    def spec(self) -> str:
        return f"{self.family.value}:{self.gamma:g}"

    # ------------------------------------------------------------ closed forms
    def ln_L(self, ln_u):
        """``ln L(u)`` from ``ln u`` (``-inf`` encodes ``u = 0``)."""
        ln_u = np.asarray(ln_u, dtype=float)
        a = softplus(ln_u)  # ln(1+u)
        g = self.gamma
        if self.family is Family.STRETCHED_LOG:
            out = np.power(a, g)
        elif self.family is Family.LOG:
            out = g * np.log1p(a)
        else:
            out = g * np.log1p(np.log1p(a))
        return _out(out)

    def ln_Linv(self, ln_v):
        """``ln L^{-1}(v)`` from ``ln v``; requires ``v >= 1``."""
        ln_v = np.asarray(ln_v, dtype=float)
        if np.any(ln_v < 0) or np.any(np.isnan(ln_v)):
            raise DomainError("L^{-1} needs an argument >= 1")
        g = self.gamma
        with np.errstate(over="ignore"):
            if self.family is Family.STRETCHED_LOG:
                a = np.power(ln_v, 1.0 / g)
            elif self.family is Family.LOG:
                a = np.expm1(ln_v / g)
            else:
                a = np.expm1(np.expm1(ln_v / g))
        if np.any(np.isinf(a)):
            raise RangeOverflowError("L^{-1}(v) exceeds the log-space range")
        with np.errstate(divide="ignore"):
            out = np.where(a > 0, log_expm1(np.where(a > 0, a, 1.0)), -np.inf)
        return _out(out)

    def g(self, ln_u):
        """Second-order rate ``u L'(u) / L(u)``."""
        ln_u = np.asarray(ln_u, dtype=float)
        a = softplus(ln_u)
        gm = self.gamma
        with np.errstate(divide="ignore"):
            if self.family is Family.STRETCHED_LOG:
                out = gm * np.power(a, gm - 1.0)
            elif self.family is Family.LOG:
                out = gm / (1.0 + a) * _sigmoid_from_log(ln_u)
            else:
                b = np.log1p(a)
                out = gm / (1.0 + b) / (1.0 + a) * _sigmoid_from_log(ln_u)
        return _out(out)

    def d(self, ln_v):
        """Closed form of ``g(L^{-1}(v))`` from ``ln v``."""
        w = np.asarray(ln_v, dtype=float)
        if np.any(w < 0):
            raise DomainError("d needs an argument >= 1")
        gm = self.gamma
        with np.errstate(divide="ignore", over="ignore"):
            if self.family is Family.STRETCHED_LOG:
                out = gm * np.power(w, -(1.0 - gm) / gm)
            elif self.family is Family.LOG:
                x = np.expm1(w / gm)  # ln(1+u)
                out = gm * np.exp(-w / gm) * -np.expm1(-x)
            else:
                b = np.expm1(w / gm)  # ln(1 + ln(1+u))
                x = np.expm1(b)  # ln(1+u)
                out = gm * np.exp(-w / gm) * np.exp(-b) * -np.expm1(-x)
        return _out(out)

    def ln_sigma_from_exp(self, E):
        """Trap depth ``L^{-1}(e^E)`` in log space; vectorised sampler core."""
        E = np.asarray(E, dtype=float)
        if np.any(~(E > 0)):
            raise DomainError("exponential variates must be positive")
        g = self.gamma
        with np.errstate(over="ignore"):
            if self.family is Family.STRETCHED_LOG:
                # ln(1+sigma) = E^(1/gamma); stay in logs when that underflows
                ln_a = np.log(E) / g
                a = np.power(E, 1.0 / g)
            elif self.family is Family.LOG:
                a = np.expm1(E / g)
                ln_a = np.log(a)
            else:
                a = np.expm1(np.expm1(E / g))
                ln_a = np.log(a)
        if np.any(np.isinf(a)):
            raise RangeOverflowError("trap depth exceeds the log-space range")
        tiny = a < 1e-8
        with np.errstate(divide="ignore"):
            out = np.where(tiny, ln_a + 0.5 * a, log_expm1(np.where(tiny, 1.0, a)))
        return _out(out)

    # ----------------------------------------------------------- derived laws
    def ln_tail(self, ln_u):
        """``ln P(sigma > u) = -ln L(u)``."""
        return _out(-np.asarray(self.ln_L(ln_u)))

    def ln_truncated_mean(self, ln_a: float) -> float:
        """``ln E[sigma; sigma < a]`` by quadrature.

        Uses ``E[sigma; sigma < a] = a * int_0^1 (1/L(a y) - 1/L(a)) dy`` with
        the substitution ``y = e^s``.
        """
        if ln_a == -math.inf:
            return -math.inf
        lla = self.ln_L(ln_a)

        def integrand(s: float) -> float:
            # exp(-lnL(a e^s)) - exp(-lnL(a)), factored to avoid cancellation
            diff = lla - self.ln_L(ln_a + s)
            if diff <= 0:
                return 0.0
            return math.exp(s - lla) * math.expm1(diff)

        total = 0.0
        pieces = [(-1.0, 0.0), (-5.0, -1.0), (-40.0, -5.0), (-745.0, -40.0)]
        for lo, hi in pieces:
            val, _ = integrate.quad(integrand, lo, hi, limit=200, epsabs=0.0, epsrel=1e-10)
            total += val
        if total <= 0:
            return -math.inf
        return ln_a + math.log(total)

    def ln_conditional_mean_below(self, ln_a: float) -> float:
        """``ln E[sigma | sigma < a]``."""
        lla = self.ln_L(ln_a)
        return self.ln_truncated_mean(ln_a) - float(log1mexp(lla)) if lla > 0 else -math.inf

    # ------------------------------------------------------------- structure
    def analytic_N(self) -> NInfo:
        """Number of localisation sites and the boundary-case flags."""
        if self.family is not Family.STRETCHED_LOG:
            # d decays exponentially in n: the (N-2)=0 power series diverges,
            # the first-power series with log factors converges.
            return NInfo(2, True, True)
        q = self.gamma / (1.0 - self.gamma)
        k = math.floor(q)
        if q - k > 1.0 - 1e-12:
            k += 1
        N = 2 + k
        beta = (1.0 - self.gamma) / self.gamma
        return NInfo(N, (N - 2) * beta <= 1.0 + 1e-12, (N - 1) * beta > 1.0 + 1e-12)

    def eval(self, which: str, u: LogMagnitude) -> LogMagnitude | float:
        """Evaluate ``L``, ``Linv``, ``g`` or ``d`` at a magnitude."""
        if not isinstance(u, LogMagnitude):
            raise DomainError("argument must be a LogMagnitude")
        if which == "L":
            return LogMagnitude(self.ln_L(u.ln_value))
        if which == "Linv":
            if u.ln_value < 0:
                raise DomainError("Linv argument must be >= 1")
            return LogMagnitude(self.ln_Linv(u.ln_value))
        if which == "g":
            return float(self.g(u.ln_value))
        if which == "d":
            if u.ln_value < 0:
                raise DomainError("d argument must be >= 1")
            return float(self.d(u.ln_value))
        raise DomainError(f"unknown function {which!r}; expected L, Linv, g or d")

    def sample_trap(self, exp_variate: float) -> LogMagnitude:
        """Map a unit exponential variate to a trap depth."""
        if not exp_variate > 0:
            raise DomainError("exponential variate must be positive")
        return LogMagnitude(self.ln_sigma_from_exp(exp_variate))


def parse_model(spec: str) -> TailModel:
    """Parse ``family:gamma`` such as ``stretched-log:0.55``."""
    if not isinstance(spec, str) or ":" not in spec:
        raise DomainError(f"model spec {spec!r} must look like 'family:gamma'")
    fam, _, gam = spec.partition(":")
    try:
        family = Family(fam.strip())
    except ValueError:
        names = ", ".join(f.value for f in Family)
        raise DomainError(f"unknown model family in spec {spec!r} (known: {names})") from None
    try:
        gamma = float(gam)
    except ValueError:
        raise DomainError(f"model spec {spec!r} has a non-numeric gamma") from None
    return TailModel(family, gamma)


# ------------------------------------------------------------ auxiliary scale

@dataclass(frozen=True)
class AuxFunction:
    """``h_t = max(h0, ln(1 + ln(1 + t)))``."""

    h0: float = 2.0

    def __post_init__(self) -> None:
        if not (self.h0 >= 2.0 and math.isfinite(self.h0)):
            raise DomainError(f"aux floor must be >= 2, got {self.h0!r}")
        object.__setattr__(self, "h0", float(self.h0))

    @property
    def spec(self) -> str:
        return "default" if self.h0 == 2.0 else f"floor:{self.h0:g}"

    def h(self, ln_t):
        ln_t = np.asarray(ln_t, dtype=float)
        return _out(np.maximum(self.h0, np.log1p(softplus(ln_t))))

    def ln_h(self, ln_t):
        return _out(np.log(self.h(ln_t)))

    def solve_t_over_h(self, ln_rhs: float) -> float:
        """``ln t`` solving ``t / h_t = rhs``; ``t / h_t`` is strictly increasing."""
        if not math.isfinite(ln_rhs):
            raise DomainError("right-hand side must be a finite positive magnitude")

        def f(x: float) -> float:
            return x - float(self.ln_h(x)) - ln_rhs

        lo = ln_rhs
        hi = ln_rhs + float(self.ln_h(ln_rhs + math.log(1e3))) + math.log(1e3)
        while f(hi) < 0:
            hi += 2.0 * (hi - lo) + 1.0
        if f(lo) >= 0:
            return lo
        return optimize.brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def parse_aux(spec: str) -> AuxFunction:
    """Parse ``default`` or ``floor:<h0>``."""
    if spec == "default":
        return AuxFunction()
    if isinstance(spec, str) and spec.startswith("floor:"):
        try:
            return AuxFunction(float(spec[len("floor:"):]))
        except ValueError:
            pass
    raise DomainError(f"aux spec {spec!r} must be 'default' or 'floor:<h0>'")


# ------------------------------------------------------------ diagnostics

@dataclass(frozen=True)
class SeriesDiagnostic:
    """Partial sums of a positive series and their growth over the last decade."""

    label: str
    n_max: int
    partial_sum: float
    decade_growth: float
    verdict: str  # "converges", "diverges" or "inconclusive" (diagnostic only)


def _series_diagnostic(label: str, terms: np.ndarray, lo: float = 0.01, hi: float = 0.10) -> SeriesDiagnostic:
    csum = np.cumsum(terms)
    n_max = terms.size
    before = csum[n_max // 10 - 1]
    total = float(csum[-1])
    growth = math.inf if before == 0 and total > 0 else (total / before - 1.0 if before > 0 else 0.0)
    verdict = "converges" if growth < lo else ("diverges" if growth > hi else "inconclusive")
    return SeriesDiagnostic(label, n_max, total, float(growth), verdict)


def n_series_diagnostic(model: TailModel, ell: int, n_max: int = 10**6) -> SeriesDiagnostic:
    """Diagnostic for the series of ``(d(e^n) ln n)^(ell-1)``, ``n <= n_max``."""
    if ell < 1 or n_max < 10:
        raise DomainError("need ell >= 1 and n_max >= 10")
    n = np.arange(1, n_max + 1, dtype=float)
    base = model.d(n) * np.log(n)
    terms = np.power(base, ell - 1)
    return _series_diagnostic(f"(d(e^n) ln n)^{ell - 1}", terms)


@dataclass(frozen=True)
class NConsistency:
    N: int
    diagnostics: dict[int, SeriesDiagnostic]
    consistent: bool


def n_consistency(model: TailModel, n_max: int = 10**6, ells: tuple[int, ...] = (2, 3, 4, 5, 6)) -> NConsistency:
    """Compare the analytic count with the partial-sum sign pattern.

    Consistent when the ``N``-th series looks convergent and, if ``N - 1``
    is on the grid, the ``(N-1)``-th series still grows by more than 10 %.
    """
    N = model.analytic_N().N
    diags = {ell: n_series_diagnostic(model, ell, n_max) for ell in ells}
    ok = True
    if N in diags:
        ok &= diags[N].verdict == "converges"
    if N - 1 in diags:
        ok &= diags[N - 1].verdict == "diverges"
    return NConsistency(N, diags, bool(ok))


@dataclass
class AssumptionReport:
    model: str
    aux: str
    slow_variation_max: float
    second_order_max: float
    h_conditions_hold: bool
    h_condition_failures: list[dict] = field(default_factory=list)
    h3_values: list[tuple[float, float]] = field(default_factory=list)
    h4_series: list[SeriesDiagnostic] = field(default_factory=list)
    note: str = "numerical diagnostic; not a proof"


def check_assumptions(
    model: TailModel,
    aux: AuxFunction,
    u_grid,
    v_grid,
    t_grid=None,
    n_max: int = 10**5,
    k_max: int = 4,
) -> AssumptionReport:
    """Numerical report on slow variation, the second-order rate and ``h_t``.

    ``u_grid``, ``v_grid`` and ``t_grid`` are given as natural logarithms of
    the magnitudes (``ln u``, ``ln v``, ``ln t``).
    """
    lu = np.asarray(u_grid, dtype=float)[:, None]
    lv = np.asarray(v_grid, dtype=float)[None, :]
    if lu.size == 0 or lv.size == 0:
        raise DomainError("grids must be non-empty")
    dl = model.ln_L(lu + lv) - model.ln_L(lu)
    ratio_m1 = np.expm1(dl)
    slow = float(np.max(np.abs(ratio_m1)))
    second = float(np.max(np.abs(ratio_m1 / model.g(lu) - lv)))

    lt = np.asarray(t_grid if t_grid is not None else lu.ravel(), dtype=float)
    failures = []
    h3_values = []
    for x in lt:
        h = float(aux.h(x))
        lh = math.log(h)
        llt = float(model.ln_L(x))
        for k in range(1, k_max + 1):
            up = math.expm1(float(model.ln_L(x + k * lh)) - llt)
            down = math.expm1(float(model.ln_L(x - k * lh)) - llt) if x - k * lh > -745 else -1.0
            if not up < 1.0 / h:
                failures.append({"ln_t": float(x), "k": k, "side": "upper", "excess": up - 1.0 / h})
            if not down > -1.0 / h:
                failures.append({"ln_t": float(x), "k": k, "side": "lower", "excess": -1.0 / h - down})
        ln_a = x + 2 * lh
        ln_mean = model.ln_truncated_mean(ln_a)
        h3 = 4 * lh + float(model.ln_L(ln_a)) + ln_mean - ln_a
        h3_values.append((float(x), math.exp(h3) if h3 < LN_FLOAT_MAX else math.inf))

    N = model.analytic_N().N
    n = np.arange(1, n_max + 1, dtype=float)
    ln_arg = math.log(2 * N) + 2 * n + model.ln_L(2 * n) + np.log(np.maximum(np.log(n), 1e-300))
    h_hat = np.where(n > 1, aux.h(ln_arg), aux.h0)
    s1 = np.exp(-n / 2) * h_hat
    base = model.d(n) * np.log(n) * h_hat**5
    s2 = np.power(base, N - 1)
    series = [
        _series_diagnostic("e^{-n/2} h_n", s1),
        _series_diagnostic(f"(d(e^n) ln n h_n^5)^{N - 1}", s2),
    ]
    return AssumptionReport(
        model=model.spec,
        aux=aux.spec,
        slow_variation_max=slow,
        second_order_max=second,
        h_conditions_hold=not failures,
        h_condition_failures=failures,
        h3_values=h3_values,
        h4_series=series,
    )
