"""Nonnegative reals stored by their natural logarithm.

Zero is encoded as ``-inf``; no other special values are admitted.
The module also provides array helpers used by the streaming scans.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import total_ordering
from typing import Iterable

import numpy as np

from .errors import DomainError, RangeOverflowError

# ln of the largest finite double
LN_FLOAT_MAX = math.log(np.finfo(float).max)
# ln of the smallest positive subnormal
LN_FLOAT_TINY = math.log(np.finfo(float).smallest_subnormal)


@total_ordering
@dataclass(frozen=True)
class LogMagnitude:
    """A nonnegative magnitude represented as ``ln_value``."""

    ln_value: float

    def __post_init__(self) -> None:
        v = float(self.ln_value)
        if math.isnan(v):
            raise DomainError("ln_value must not be NaN")
        if v == math.inf:
            raise DomainError("infinite magnitudes are not representable")
        object.__setattr__(self, "ln_value", v)

    @classmethod
    def zero(cls) -> LogMagnitude:
        return cls(-math.inf)

    @classmethod
    def from_float(cls, x: float) -> LogMagnitude:
        if x < 0 or math.isnan(x):
            raise DomainError(f"magnitude must be nonnegative, got {x!r}")
        return cls(math.log(x) if x > 0 else -math.inf)

    @property
    def is_zero(self) -> bool:
        return self.ln_value == -math.inf

    def __lt__(self, other: LogMagnitude) -> bool:
        if not isinstance(other, LogMagnitude):
            return NotImplemented
        return self.ln_value < other.ln_value

    def __mul__(self, other: LogMagnitude) -> LogMagnitude:
        if not isinstance(other, LogMagnitude):
            return NotImplemented
        return LogMagnitude(self.ln_value + other.ln_value)

    def __truediv__(self, other: LogMagnitude) -> LogMagnitude:
        if not isinstance(other, LogMagnitude):
            return NotImplemented
        if other.is_zero:
            raise DomainError("division by a zero magnitude")
        return LogMagnitude(self.ln_value - other.ln_value)

    def __add__(self, other: LogMagnitude) -> LogMagnitude:
        if not isinstance(other, LogMagnitude):
            return NotImplemented
        return lse_sum([self, other])

    def to_json(self) -> float | str:
        return "-inf" if self.is_zero else self.ln_value

    @classmethod
    def from_json(cls, value: float | str) -> LogMagnitude:
        if value == "-inf":
            return cls.zero()
        if isinstance(value, str):
            raise DomainError(f"unrecognised serialized magnitude {value!r}")
        return cls(float(value))

    def __repr__(self) -> str:
        return f"LogMagnitude(ln={self.ln_value!r})"


def lse_sum(values: Iterable[LogMagnitude]) -> LogMagnitude:
    """Log of the sum of the represented magnitudes.

    A single pass keeps the running maximum ``m`` and the accumulated
    ratio ``r = sum exp(v - m)``; when a new maximum arrives the ratio is
    rescaled. State is O(1), so the function works on streams.
    """
    m = -math.inf
    r = 0.0
    for item in values:
        v = item.ln_value
        if v == -math.inf:
            continue
        if v <= m:
            r += math.exp(v - m)
        else:
            r = r * math.exp(m - v) + 1.0 if m > -math.inf else 1.0
            m = v
    if m == -math.inf:
        return LogMagnitude.zero()
    return LogMagnitude(m + math.log(r))


def sub_positive(a: LogMagnitude, b: LogMagnitude) -> LogMagnitude:
    """Log of ``exp(a) - exp(b)`` for ``b <= a``.

    Accuracy degrades when the operands agree to more than about twelve
    digits, the usual cancellation limit.
    """
    if b.ln_value > a.ln_value:
        raise DomainError(f"sub_positive needs b <= a, got a={a.ln_value}, b={b.ln_value}")
    if b.is_zero:
        return a
    if a.ln_value == b.ln_value:
        return LogMagnitude.zero()
    return LogMagnitude(a.ln_value + log1mexp(a.ln_value - b.ln_value))


def to_linear_checked(a: LogMagnitude) -> float:
    """Convert to a float, refusing values beyond the exponent range."""
    if a.is_zero:
        return 0.0
    if a.ln_value > LN_FLOAT_MAX:
        raise RangeOverflowError(
            f"ln value {a.ln_value:.6g} exceeds the float range (max {LN_FLOAT_MAX:.6g}); rescale first"
        )
    return math.exp(a.ln_value)


# ---------------------------------------------------------------- array helpers

def log1mexp(x):
    """``ln(1 - exp(-x))`` for ``x > 0``, accurate across the whole range."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(
            x < math.log(2.0),
            np.log(-np.expm1(-np.minimum(x, math.log(2.0)))),
            np.log1p(-np.exp(-np.maximum(x, math.log(2.0)))),
        )
    return out if out.ndim else float(out)


def log_expm1(x):
    """``ln(exp(x) - 1)`` for ``x > 0`` without overflow or underflow."""
    x = np.asarray(x, dtype=float)
    big = x > 1.0
    tiny = x < 1e-8
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        mid = np.log(np.expm1(np.clip(x, 1e-8, 1.0)))
        out = np.where(big, x + log1mexp(np.maximum(x, 1.0)), mid)
        # expm1(x) = x(1 + x/2 + ...): keeps tiny arguments out of underflow
        lx = np.log(np.where(x > 0, x, 1.0))
        out = np.where(tiny, np.where(x > 0, lx + 0.5 * x, -np.inf), out)
    return out if out.ndim else float(out)


def softplus(x):
    """``ln(1 + exp(x))``."""
    out = np.logaddexp(0.0, np.asarray(x, dtype=float))
    return out if np.ndim(out) else float(out)


def lse_array(ln_values) -> float:
    """Log of the sum of ``exp`` of an array; ``-inf`` for empty input."""
    v = np.asarray(ln_values, dtype=float)
    if v.size == 0:
        return -math.inf
    m = float(np.max(v))
    if m == -math.inf:
        return -math.inf
    return m + math.log(float(np.sum(np.exp(v - m))))


def lse_accumulate(ln_values, carry: float = -math.inf) -> np.ndarray:
    """Running log-sum-exp, continuing from ``carry`` (the log of a prior sum)."""
    v = np.asarray(ln_values, dtype=float)
    if v.size == 0:
        return v.copy()
    if carry == -math.inf:
        return np.logaddexp.accumulate(v)
    out = np.logaddexp.accumulate(np.concatenate(([carry], v)))
    return out[1:]
