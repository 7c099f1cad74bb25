"""Small-time regressor families and the map to physical parameters.

Two model kinds are supported, each in an initial-data and a source flavour:

  polynomial, initial data   f(t) = c0 + sum_i c_i t^beta_i
  polynomial, source         f(t) = sum_i c_i t^beta_i
  rational, initial data     f(t) = c0 / (1 + sum_i d_i t^beta_i)
  rational, source           f(t) = cA (1 - 1 / (1 + sum_i d_i t^beta_i))

The amplitudes are stored raw; the Gamma factors that link them to physical
quantities (orders, weights, boundary values of the datum) appear only in
to_physical / from_physical, so the optimizer never differentiates through
Gamma.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from fracorder.forward import Case
from fracorder.specfun import DomainError, gamma

__all__ = [
    "Kind",
    "ModelParams",
    "PhysicalParams",
    "IdentifiabilityError",
    "eval_model",
    "grad_model",
    "to_physical",
    "from_physical",
]


class Kind(enum.Enum):
    POLYNOMIAL = "polynomial"
    RATIONAL = "rational"


class IdentifiabilityError(ValueError):
    """The fitted exponents do not map to admissible physical orders."""


def n_coeffs(kind: Kind, case: Case, n_terms: int) -> int:
    """Number of amplitude parameters for a given model shape."""
    if kind is Kind.POLYNOMIAL and case is Case.SOURCE:
        return n_terms
    return n_terms + 1


@dataclass(frozen=True)
class ModelParams:
    kind: Kind
    case: Case
    c: tuple[float, ...]
    beta: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "c", tuple(float(x) for x in self.c))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        b = self.beta
        if len(b) < 1:
            raise DomainError("at least one exponent is required")
        if not all(0.0 < x < 2.0 for x in b):
            raise DomainError(f"exponents must lie in (0, 2), got {b}")
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise DomainError(f"exponents must be strictly increasing, got {b}")
        expected = n_coeffs(self.kind, self.case, len(b))
        if len(self.c) != expected:
            raise DomainError(
                f"{self.kind.value}/{self.case.value} with {len(b)} exponents "
                f"needs {expected} amplitudes, got {len(self.c)}"
            )

    @property
    def n_terms(self) -> int:
        return len(self.beta)


@dataclass(frozen=True)
class PhysicalParams:
    """Recovered physical quantities with the leading weight fixed to one.

    Stored as raw floats rather than a validated order spec: boundary-regime
    fits legitimately return degenerate values (a zero weight, an order at a
    box bound) that a strict order spec would reject.
    """

    alphas: tuple[float, ...]
    weights: tuple[float, ...]
    amplitude: float
    constant: float | None = None

    def to_order_spec(self):
        from fracorder.specfun import OrderSpec

        return OrderSpec(self.alphas, self.weights)


# ---------------------------------------------------------------------------
# evaluation and gradients on raw arrays (used by the optimizer mid-flight,
# where the exponents may transiently violate the ordering invariant)
# ---------------------------------------------------------------------------


def _eval_arrays(kind: Kind, case: Case, c, beta, t: np.ndarray) -> np.ndarray:
    if kind is Kind.POLYNOMIAL:
        if case is Case.INITIAL_DATA:
            out = np.full_like(t, c[0])
            for ci, bi in zip(c[1:], beta):
                out = out + ci * t**bi
        else:
            out = np.zeros_like(t)
            for ci, bi in zip(c, beta):
                out = out + ci * t**bi
        return out
    den = np.ones_like(t)
    for di, bi in zip(c[1:], beta):
        den = den + di * t**bi
    if case is Case.INITIAL_DATA:
        return c[0] / den
    return c[0] * (1.0 - 1.0 / den)


def _grad_arrays(kind: Kind, case: Case, c, beta, t: np.ndarray) -> np.ndarray:
    lnt = np.log(t)
    m = len(beta)
    if kind is Kind.POLYNOMIAL:
        has_const = case is Case.INITIAL_DATA
        rows = []
        if has_const:
            rows.append(np.ones_like(t))
        powers = [t**bi for bi in beta]
        rows.extend(powers)
        amp = c[1:] if has_const else c
        rows.extend(ai * pi * lnt for ai, pi in zip(amp, powers))
        return np.vstack(rows)
    powers = [t**bi for bi in beta]
    den = np.ones_like(t)
    for di, pi in zip(c[1:], powers):
        den = den + di * pi
    q2 = 1.0 / (den * den)
    rows = []
    if case is Case.INITIAL_DATA:
        rows.append(1.0 / den)
        rows.extend(-c[0] * pi * q2 for pi in powers)
        rows.extend(-c[0] * di * pi * lnt * q2 for di, pi in zip(c[1:], powers))
    else:
        rows.append((den - 1.0) / den)
        rows.extend(c[0] * pi * q2 for pi in powers)
        rows.extend(c[0] * di * pi * lnt * q2 for di, pi in zip(c[1:], powers))
    return np.vstack(rows)


def _as_time_array(t) -> tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(arr <= 0.0):
        raise DomainError("model evaluation requires t > 0")
    return arr, scalar


def eval_model(params: ModelParams, t):
    """Evaluate the regressor at t > 0 (scalar or array)."""
    arr, scalar = _as_time_array(t)
    out = _eval_arrays(params.kind, params.case, params.c, params.beta, arr)
    return float(out[0]) if scalar else out


def grad_model(params: ModelParams, t):
    """Partial derivatives with respect to (c..., beta...), in that order.

    Returns shape (n_params,) for scalar t and (n_params, len(t)) otherwise.
    """
    arr, scalar = _as_time_array(t)
    out = _grad_arrays(params.kind, params.case, params.c, params.beta, arr)
    return out[:, 0] if scalar else out


# ---------------------------------------------------------------------------
# physical-parameter correspondence
# ---------------------------------------------------------------------------


def to_physical(params: ModelParams, a: float = 0.0) -> PhysicalParams:
    """Map fitted (c, beta) to orders, weight ratio and amplitude.

    The source case undoes the exponent shift by a.  The leading-order
    correspondence is

        beta_1 = alpha_N (+ a),   beta_2 = 2 alpha_N - alpha_1 (+ a),

    with the beta_2 term entering the expansion with the opposite sign of the
    beta_1 term; the leading weight is fixed to one.
    """
    m = params.n_terms
    if m not in (1, 2):
        raise DomainError("physical inversion supports one or two power terms")
    shift = a if params.case is Case.SOURCE else 0.0
    b = params.beta
    alpha_n = b[0] - shift
    c = params.c
    if params.kind is Kind.POLYNOMIAL:
        if params.case is Case.INITIAL_DATA:
            amplitude = -c[1] * gamma(b[0] + 1.0)
            constant = c[0]
            second = c[2] if m == 2 else None
            second_sign = 1.0
        else:
            amplitude = c[0] * gamma(b[0] + 1.0)
            constant = None
            second = c[1] if m == 2 else None
            second_sign = -1.0
        r1 = None
        if m == 2:
            num = second_sign * second * gamma(b[1] + 1.0)
            r1 = num / amplitude + 0.0 if amplitude != 0.0 else math.nan
    else:
        c0, d1 = c[0], c[1]
        lead = d1 * gamma(b[0] + 1.0)
        amplitude = c0 * lead
        constant = c0 if params.case is Case.INITIAL_DATA else None
        r1 = None
        if m == 2:
            r1 = (-c[2] * gamma(b[1] + 1.0) / lead + 0.0) if lead != 0.0 else math.nan
    if m == 1:
        return PhysicalParams((alpha_n,), (1.0,), amplitude, constant)
    alpha_1 = 2.0 * b[0] - b[1] - shift
    if alpha_1 <= 0.0:
        raise IdentifiabilityError(
            f"exponents beta={b} map to a non-positive first order "
            f"alpha_1 = {alpha_1:.6g}"
        )
    return PhysicalParams((alpha_1, alpha_n), (r1, 1.0), amplitude, constant)


def from_physical(
    phys: PhysicalParams, kind: Kind, case: Case, a: float = 0.0
) -> ModelParams:
    """Exact inverse of to_physical (source case shifts the exponents by a)."""
    n = len(phys.alphas)
    if n not in (1, 2):
        raise DomainError("physical inversion supports one or two orders")
    shift = a if case is Case.SOURCE else 0.0
    alpha_n = phys.alphas[-1]
    b0 = alpha_n + shift
    beta = [b0]
    if n == 2:
        beta.append(2.0 * alpha_n - phys.alphas[0] + shift)
    amp = phys.amplitude
    r1 = phys.weights[0] if n == 2 else None
    if kind is Kind.POLYNOMIAL:
        if case is Case.INITIAL_DATA:
            c = [phys.constant, -amp / gamma(b0 + 1.0)]
            if n == 2:
                c.append(amp * r1 / gamma(beta[1] + 1.0))
        else:
            c = [amp / gamma(b0 + 1.0)]
            if n == 2:
                c.append(-amp * r1 / gamma(beta[1] + 1.0))
    else:
        if case is Case.INITIAL_DATA:
            c0 = phys.constant
            c = [c0, amp / (c0 * gamma(b0 + 1.0))]
            if n == 2:
                c.append(-amp * r1 / (c0 * gamma(beta[1] + 1.0)))
        else:
            c = [amp, 1.0 / gamma(b0 + 1.0)]
            if n == 2:
                c.append(-r1 / gamma(beta[1] + 1.0))
    return ModelParams(kind, case, tuple(c), tuple(beta))
