"""Spectral forward model.

Assembles boundary time traces g(t) and Laplace-domain traces from a list of
eigenmodes.  Each mode carries one fused weight w_n: the product of the
expansion coefficient of the datum (initial value or source profile) and the
boundary trace of the eigenfunction at the observation point.  For the
cosine-product examples below every eigenfunction equals one at the corner,
so w_n is just the raw expansion coefficient.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fracorder.specfun import (
    AccuracyError,
    DomainError,
    OrderSpec,
    _kernel_ml_args,
    normalize_spec,
    s1_kernel_contour,
    s1_kernel_series,
    s2_kernel_int_series,
    series_tail_log,
    tight_contour,
)

__all__ = [
    "Case",
    "SpectralProblem",
    "TraceSample",
    "trace_initial",
    "trace_source",
    "laplace_trace",
    "build_example_4_1",
    "build_example_4_2",
    "sample_trace",
]

PI2 = math.pi * math.pi


class Case(enum.Enum):
    INITIAL_DATA = "initial-data"
    SOURCE = "source"


@dataclass(frozen=True)
class SpectralProblem:
    """Eigenvalues with fused boundary weights plus optional reference scalars."""

    modes: tuple[tuple[float, float], ...]
    case: Case
    source_exponent: float = 0.0
    source_scale: float = 1.0
    ref_u0_x0: float | None = None
    ref_Au0_x0: float | None = None
    ref_f_x0: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "modes", tuple((float(l), float(w)) for l, w in self.modes)
        )
        lams = [l for l, _ in self.modes]
        if not lams:
            raise DomainError("at least one mode is required")
        if not all(l > 0.0 for l in lams):
            raise DomainError("eigenvalues must be positive")
        if any(lams[i] > lams[i + 1] for i in range(len(lams) - 1)):
            raise DomainError("eigenvalues must be nondecreasing")
        if self.case is Case.SOURCE and not 0.0 <= self.source_exponent <= 1.0:
            raise DomainError("source exponent must lie in [0, 1]")


@dataclass(frozen=True)
class TraceSample:
    """Observation grid on (0, T0] with trace values."""

    times: np.ndarray
    values: np.ndarray
    T0: float

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if t.ndim != 1 or v.ndim != 1 or len(t) != len(v):
            raise DomainError("times and values must be 1-d arrays of equal length")
        if len(t) == 0:
            raise DomainError("empty sample")
        if not self.T0 > 0.0:
            raise DomainError("T0 must be positive")
        if t[0] <= 0.0 or np.any(np.diff(t) <= 0.0):
            raise DomainError("times must be strictly increasing and positive")
        if t[-1] > self.T0 * (1.0 + 1e-12):
            raise DomainError("times must not exceed T0")

    def __len__(self) -> int:
        return len(self.times)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("t,g\n")
            for t, g in zip(self.times, self.values):
                fh.write(f"{t:.17g},{g:.17g}\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "TraceSample":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["t", "g"]:
                raise DomainError(f"unexpected trace header {header}")
            rows = [(float(a), float(b)) for a, b in reader]
        t = np.array([r[0] for r in rows])
        g = np.array([r[1] for r in rows])
        return cls(t, g, T0=float(t[-1]))


# ---------------------------------------------------------------------------
# pointwise trace evaluation
# ---------------------------------------------------------------------------


def _s1_value(lam: float, spec: OrderSpec, t: float, method: str) -> float:
    if method == "series":
        return s1_kernel_series(lam, spec, t)
    if method == "auto":
        # series only where it is cheap and mildly cancelling; the contour
        # quadrature covers the rest at ~1e-7 accuracy for a fraction of the
        # cost of an extended-precision series
        args = _kernel_ml_args(lam, spec, t, 1.0 + spec.alphas[-1])
        small = sum(-z for z in args.zs) <= 3.0
        if small and series_tail_log(args) < -40.0:
            try:
                return s1_kernel_series(lam, spec, t)
            except AccuracyError:
                pass
        return s1_kernel_contour(lam, spec, t, tight_contour(t, 1600))
    raise DomainError(f"unknown method {method!r}")


def trace_initial(
    problem: SpectralProblem, spec: OrderSpec, t: float, *, method: str = "series"
) -> float:
    """g(t) for the initial-datum case: sum of w_n S1(t; lambda_n)."""
    if problem.case is not Case.INITIAL_DATA:
        raise DomainError("trace_initial requires an initial-data problem")
    rn = spec.weights[-1]
    nspec = normalize_spec(spec, 1.0).spec
    return math.fsum(
        w * _s1_value(lam / rn, nspec, t, method) for lam, w in problem.modes
    )


def trace_source(
    problem: SpectralProblem, spec: OrderSpec, t: float, *, method: str = "series"
) -> float:
    """g(t) for the source case with power-law time factor
    sigma(s) = c0 s^a / Gamma(a+1)."""
    if problem.case is not Case.SOURCE:
        raise DomainError("trace_source requires a source problem")
    rn = spec.weights[-1]
    nspec = normalize_spec(spec, 1.0).spec
    a = problem.source_exponent
    total = math.fsum(
        w * s2_kernel_int_series(lam / rn, nspec, a, t) / rn
        for lam, w in problem.modes
    )
    return problem.source_scale * total


def laplace_trace(problem: SpectralProblem, spec: OrderSpec, p: float) -> float:
    """Laplace transform of the boundary trace at real p > 0."""
    if not p > 0.0:
        raise DomainError(f"p must be positive, got {p}")
    q = math.fsum(r * p**a for a, r in zip(spec.alphas, spec.weights))
    if problem.case is Case.INITIAL_DATA:
        num = math.fsum(r * p ** (a - 1.0) for a, r in zip(spec.alphas, spec.weights))
        return math.fsum(w * num / (lam + q) for lam, w in problem.modes)
    sig_hat = problem.source_scale * p ** (-problem.source_exponent - 1.0)
    return sig_hat * math.fsum(w / (lam + q) for lam, w in problem.modes)


# ---------------------------------------------------------------------------
# example problems
# ---------------------------------------------------------------------------


def build_example_4_1(orders: OrderSpec | None = None) -> SpectralProblem:
    """Interval problem whose initial datum is an eigenfunction: one mode at
    lambda = pi^2 + 1 with unit weight, observed at the left endpoint."""
    if orders is not None:
        if orders.n > 2:
            raise DomainError("the single-mode example uses at most two orders")
        if abs(orders.weights[-1] - 1.0) > 1e-12:
            raise DomainError("the leading weight must be normalized to 1")
    lam = PI2 + 1.0
    return SpectralProblem(
        modes=((lam, 1.0),),
        case=Case.INITIAL_DATA,
        ref_u0_x0=1.0,
        ref_Au0_x0=lam,
    )


def build_example_4_2(case: str) -> SpectralProblem:
    """Square-domain cosine problems observed at the corner.

    Case "i": initial datum with modes at 2 pi^2, 5 pi^2 (twice), 8 pi^2.
    Case "ii": separable source with unit time factor (a = 0, c0 = 1).
    """
    if case == "i":
        modes = (
            (2.0 * PI2, 1.0),
            (5.0 * PI2, 0.25),
            (5.0 * PI2, 0.25),
            (8.0 * PI2, 0.125),
        )
        return SpectralProblem(
            modes=modes,
            case=Case.INITIAL_DATA,
            ref_u0_x0=1.625,
            ref_Au0_x0=5.5 * PI2,
        )
    if case == "ii":
        modes = (
            (2.0 * PI2, 1.0),
            (5.0 * PI2, 0.5),
            (5.0 * PI2, 0.5),
            (10.0 * PI2, 0.25),
            (10.0 * PI2, 0.25),
        )
        return SpectralProblem(
            modes=modes,
            case=Case.SOURCE,
            source_exponent=0.0,
            source_scale=1.0,
            ref_f_x0=2.5,
        )
    raise DomainError(f"unknown case {case!r}; expected 'i' or 'ii'")


def sample_trace(
    problem: SpectralProblem,
    spec: OrderSpec,
    T0: float,
    n: int,
    *,
    method: str = "series",
) -> TraceSample:
    """Uniform open grid t_k = k T0 / n, k = 1..n (t = 0 excluded)."""
    if n < 2:
        raise DomainError(f"need n >= 2 grid points, got {n}")
    if not T0 > 0.0:
        raise DomainError(f"T0 must be positive, got {T0}")
    times = np.arange(1, n + 1) * (T0 / n)
    if problem.case is Case.INITIAL_DATA:
        values = np.array([trace_initial(problem, spec, t, method=method) for t in times])
    else:
        values = np.array([trace_source(problem, spec, t, method=method) for t in times])
    return TraceSample(times, values, T0=T0)
