"""Special-function kernel layer.

Gamma, the two-parameter and multinomial Mittag-Leffler functions, and the
contour-integral relaxation kernels that serve as an independent cross-check
of the series evaluations.

The Mittag-Leffler series are summed with compensated (Kahan) accumulation
and certify their own rounding envelope: the worst term magnitude is tracked
in log space, and when alternating-term cancellation would eat the requested
accuracy in double precision the evaluation transparently retries in bounded
extended precision.  When even that cannot be certified, AccuracyError is
raised instead of silently returning garbage.

Everything here is a pure function of its arguments; there is no module
state beyond constants, so concurrent calls are safe (the rare extended
precision path serializes on a lock because mpmath's precision is global).
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Z_MAX",
    "DEFAULT_SHELL_CAP",
    "MAX_ML_TERMS",
    "DomainError",
    "AccuracyError",
    "OrderSpec",
    "MLArgs",
    "ContourSpec",
    "NormalizedSpec",
    "gamma",
    "log_gamma",
    "ml2",
    "mml",
    "normalize_spec",
    "s1_kernel_series",
    "s2_kernel_series",
    "s2_kernel_int_series",
    "s1_kernel_contour",
    "s2_kernel_contour",
    "default_contour",
    "tight_contour",
]

# Series evaluation envelope: beyond this argument size the alternating series
# is never attempted, even in extended precision.
Z_MAX = 40.0
# Shell truncation of the multinomial series in the double-precision path.
DEFAULT_SHELL_CAP = 100
# Cap on the number of Mittag-Leffler arguments (compositions blow up fast).
MAX_ML_TERMS = 4

_EPS = float(np.finfo(float).eps)
# Margin applied to the cancellation certificate: accounts for the relative
# error of terms assembled as exp(log-expressions) whose logs reach O(300).
_CERT_FACTOR = 400.0
_MAX_MP_DPS = 400
_MP_LOCK = threading.Lock()
_LN10 = math.log(10.0)

_mpmath_module = None


class DomainError(ValueError):
    """Argument outside the supported regime."""


class AccuracyError(ArithmeticError):
    """The evaluation cannot be certified to the target accuracy."""


def _mpmath():
    global _mpmath_module
    if _mpmath_module is None:
        import mpmath

        _mpmath_module = mpmath
    return _mpmath_module


def gamma(x: float) -> float:
    """Euler Gamma for x > 0."""
    if not x > 0.0:
        raise DomainError(f"gamma requires x > 0, got {x!r}")
    return math.gamma(x)


def log_gamma(x: float) -> float:
    """log Gamma(x) for x > 0.  The series kernels below route through this
    so a perturbation here propagates to every Mittag-Leffler value."""
    if not x > 0.0:
        raise DomainError(f"log_gamma requires x > 0, got {x!r}")
    return math.lgamma(x)


def _log_rgamma(x: float) -> tuple[float, float]:
    """(log |1/Gamma(x)|, sign).  Zero at the poles x = 0, -1, -2, ..."""
    if x > 0.0:
        return -log_gamma(x), 1.0
    if x == math.floor(x):
        return -math.inf, 0.0
    # reflection: 1/Gamma(x) = Gamma(1-x) sin(pi x) / pi
    s = math.sin(math.pi * x)
    return (
        log_gamma(1.0 - x) + math.log(abs(s)) - math.log(math.pi),
        math.copysign(1.0, s),
    )


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrderSpec:
    """Fractional orders 0 < alpha_1 < ... < alpha_N < 1 with positive weights."""

    alphas: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        a, w = self.alphas, self.weights
        if len(a) < 1:
            raise DomainError("at least one order is required")
        if len(a) != len(w):
            raise DomainError("orders and weights must have equal length")
        if not all(0.0 < x < 1.0 for x in a):
            raise DomainError(f"orders must lie in (0, 1), got {a}")
        if any(a[i] >= a[i + 1] for i in range(len(a) - 1)):
            raise DomainError(f"orders must be strictly increasing, got {a}")
        if not all(x > 0.0 for x in w):
            raise DomainError(f"weights must be positive, got {w}")

    @property
    def n(self) -> int:
        return len(self.alphas)


@dataclass(frozen=True)
class MLArgs:
    """Arguments of the multinomial Mittag-Leffler function.

    beta0 is allowed up to 3 (not just 2) so the source kernel integrated
    against a power-law factor t^a, which shifts beta0 by a + 1, stays in
    range for every a in [0, 1].
    """

    beta0: float
    betas: tuple[float, ...]
    zs: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "zs", tuple(float(z) for z in self.zs))
        if not 0.0 < self.beta0 < 3.0:
            raise DomainError(f"beta0 must lie in (0, 3), got {self.beta0}")
        if len(self.betas) != len(self.zs):
            raise DomainError("betas and zs must have equal length")
        if len(self.betas) < 1:
            raise DomainError("at least one (beta, z) pair is required")
        if len(self.betas) > MAX_ML_TERMS:
            raise DomainError(
                f"at most {MAX_ML_TERMS} arguments supported, got {len(self.betas)}"
            )
        if not all(0.0 < b < 1.0 for b in self.betas):
            raise DomainError(f"betas must lie in (0, 1), got {self.betas}")
        for z in self.zs:
            if z > 0.0:
                raise DomainError(f"only non-positive arguments supported, got z={z}")
            if abs(z) > Z_MAX:
                raise DomainError(
                    f"|z| = {abs(z)} exceeds Z_MAX = {Z_MAX}; series unreliable"
                )

    @property
    def m(self) -> int:
        return len(self.betas)


@dataclass(frozen=True)
class ContourSpec:
    """Integration contour: arc of radius delta spanning |arg p| <= theta,
    plus two rays to radius r_max, with n_radial geometrically graded nodes."""

    theta: float
    delta: float
    n_radial: int
    r_max: float

    def __post_init__(self) -> None:
        if not math.pi / 2.0 < self.theta < math.pi:
            raise DomainError(f"theta must lie in (pi/2, pi), got {self.theta}")
        if not self.delta > 0.0:
            raise DomainError(f"delta must be positive, got {self.delta}")
        if self.n_radial < 16:
            raise DomainError(f"n_radial must be >= 16, got {self.n_radial}")
        if not self.r_max > self.delta:
            raise DomainError("r_max must exceed delta")


@dataclass(frozen=True)
class NormalizedSpec:
    """Result of dividing the evolution equation by the leading weight."""

    spec: OrderSpec
    lam: float
    kernel_scale: float


def normalize_spec(spec: OrderSpec, lam: float) -> NormalizedSpec:
    """Rescale so the leading weight is one.

    S1 is invariant under the joint map (lam, r) -> (lam/rN, r/rN); S2 picks
    up the factor kernel_scale = 1/rN.
    """
    rn = spec.weights[-1]
    scaled = OrderSpec(spec.alphas, tuple(w / rn for w in spec.weights))
    return NormalizedSpec(scaled, lam / rn, 1.0 / rn)


# ---------------------------------------------------------------------------
# series evaluation
# ---------------------------------------------------------------------------


class _Kahan:
    __slots__ = ("s", "c")

    def __init__(self) -> None:
        self.s = 0.0
        self.c = 0.0

    def add(self, x: float) -> None:
        y = x - self.c
        t = self.s + y
        self.c = (t - self.s) - y
        self.s = t


def _certified(value: float, peak_log: float, rel_tol: float) -> bool:
    if value == 0.0 or not math.isfinite(value):
        return False
    lhs = peak_log + math.log(_EPS * _CERT_FACTOR)
    rhs = math.log(rel_tol * abs(value))
    return lhs <= rhs


def _ml2_double(alpha: float, beta: float, z: float, kmax: int):
    ln_az = math.log(-z)
    acc = _Kahan()
    peak_log = -math.inf
    quiet = 0
    converged = False
    for k in range(kmax + 1):
        logr, sgn = _log_rgamma(alpha * k + beta)
        if sgn == 0.0:
            continue
        tlog = k * ln_az + logr
        peak_log = max(peak_log, tlog)
        if tlog > 700.0:
            return math.nan, peak_log, False
        term = math.exp(tlog) * sgn * (1.0 if k % 2 == 0 else -1.0)
        acc.add(term)
        if abs(term) <= 1e-17 * max(abs(acc.s), 1e-300):
            quiet += 1
            if quiet >= 2:
                converged = True
                break
        else:
            quiet = 0
    return acc.s, peak_log, converged


def _log_peak_scan(
    beta0: float, betas: tuple[float, ...], zs: tuple[float, ...], kcap: int
) -> float:
    """Coarse scan of the largest log term of the series (double precision).

    Used to size the working precision of the extended path before summing;
    the summation itself re-verifies against the peak it actually saw.
    """
    m = len(betas)
    lnz = [math.log(-z) if z < 0.0 else -math.inf for z in zs]
    best = _log_rgamma(beta0)[0]
    ks = sorted({int(round(kcap ** (i / 59.0))) for i in range(60)} | {1, kcap})

    def log_term(comp: tuple[int, ...]) -> float:
        k = sum(comp)
        tlog = log_gamma(k + 1.0)
        for kj, lz in zip(comp, lnz):
            if kj == 0:
                continue
            if lz == -math.inf:
                return -math.inf
            tlog += kj * lz - log_gamma(kj + 1.0)
        logr, sgn = _log_rgamma(beta0 + sum(bj * kj for bj, kj in zip(betas, comp)))
        return tlog + logr if sgn != 0.0 else -math.inf

    for k in ks:
        if m == 1:
            comps = [(k,)]
        elif m == 2:
            k1s = sorted({int(round(k * i / 16.0)) for i in range(17)})
            comps = [(k1, k - k1) for k1 in k1s]
        else:
            # axes plus the even split; backed up by the in-pass check
            comps = [tuple(k if j == i else 0 for j in range(m)) for i in range(m)]
            comps.append(tuple(k // m for _ in range(m - 1)) + (k - (m - 1) * (k // m),))
        for comp in comps:
            best = max(best, log_term(comp))
    return best


def _mp_sum_with_retry(label: str, peak_ln_guess: float, summer, rel_tol: float) -> float:
    """Run an extended-precision summation, escalating the working precision
    until the observed peak magnitude certifies the result to rel_tol.

    summer(mp, dps) must return (total, peak_ln_observed, converged).
    """
    mp = _mpmath().mp
    tol_digits = max(6, int(math.ceil(-math.log10(rel_tol))))
    dps = tol_digits + 12 + max(0, int(peak_ln_guess / _LN10) + 1)
    if dps > _MAX_MP_DPS:
        raise AccuracyError(f"{label} needs ~{dps} digits; outside the series envelope")
    with _MP_LOCK:
        old = mp.dps
        try:
            for _ in range(4):
                mp.dps = dps
                total, peak_ln, converged = summer(mp, dps)
                if not converged:
                    raise AccuracyError(f"{label}: series did not converge")
                if total == 0:
                    return 0.0
                need = (
                    tol_digits
                    + 8
                    + max(0, int(peak_ln / _LN10) + 1)
                    - int(mp.log10(abs(total)))
                )
                if need <= dps:
                    return float(total)
                if need > _MAX_MP_DPS:
                    raise AccuracyError(f"{label} needs ~{need} digits")
                dps = need + 10
        finally:
            mp.dps = old
    raise AccuracyError(f"{label}: extended-precision retries exhausted")


def _ml2_mp(alpha: float, beta: float, z: float, rel_tol: float) -> float:
    peak_guess = _log_peak_scan(beta, (alpha,), (z,), 25000) if beta > 0 else 700.0

    def summer(mp, dps):
        malpha, mbeta, mz = mp.mpf(alpha), mp.mpf(beta), mp.mpf(z)
        total = mp.mpf(0)
        power = mp.mpf(1)
        peak = mp.mpf(0)
        quiet = 0
        floor = mp.mpf(10) ** (-(dps - 4))
        for k in range(25001):
            arg = malpha * k + mbeta
            if arg <= 0 and arg == mp.floor(arg):
                term = mp.mpf(0)
            else:
                term = power / mp.gamma(arg)
            total += term
            power *= mz
            mag = abs(term)
            if mag > peak:
                peak = mag
            if mag <= floor * max(peak, mp.mpf(1e-300)):
                quiet += 1
                if quiet >= 2:
                    return total, mp.log(max(peak, mp.mpf(1e-300))), True
            else:
                quiet = 0
        return total, mp.log(max(peak, mp.mpf(1e-300))), False

    return _mp_sum_with_retry(
        f"ml2(alpha={alpha}, beta={beta}, z={z})", peak_guess, summer, rel_tol
    )


def ml2(alpha: float, beta: float, z: float, *, rel_tol: float = 1e-10, kmax: int = 400) -> float:
    """Two-parameter Mittag-Leffler function E_{alpha,beta}(z) for z <= 0."""
    if not 0.0 < alpha < 2.0:
        raise DomainError(f"alpha must lie in (0, 2), got {alpha}")
    if z > 0.0:
        raise DomainError(f"only z <= 0 is supported, got {z}")
    if abs(z) > Z_MAX:
        raise DomainError(f"|z| = {abs(z)} exceeds Z_MAX = {Z_MAX}; series unreliable")
    if z == 0.0:
        logr, sgn = _log_rgamma(beta)
        return sgn * math.exp(logr) if sgn != 0.0 else 0.0
    if alpha == 1.0 and beta == 1.0:
        # exact classical limit; the raw series cancels hopelessly for large |z|
        return math.exp(z)
    value, peak_log, converged = _ml2_double(alpha, beta, z, kmax)
    if converged and _certified(value, peak_log, rel_tol):
        return value
    return _ml2_mp(alpha, beta, z, rel_tol)


def _compositions(k: int, m: int):
    """All m-tuples of non-negative integers summing to k, lexicographic."""
    if m == 1:
        yield (k,)
        return
    for first in range(k + 1):
        for rest in _compositions(k - first, m - 1):
            yield (first, *rest)


def _mml_double(args: MLArgs, kmax: int):
    b0, bs, zs = args.beta0, args.betas, args.zs
    m = args.m
    ln_az = [math.log(-z) if z < 0.0 else None for z in zs]
    acc = _Kahan()
    peak_log = -math.inf
    quiet = 0
    converged = False
    for k in range(kmax + 1):
        lgk = log_gamma(k + 1.0)
        terms: list[float] = []
        overflow = False
        for comp in _compositions(k, m):
            # the multinomial log coefficient is assembled separately so the
            # m = 1 case cancels exactly and matches the two-parameter series
            coef_log = lgk
            pow_log = 0.0
            skip = False
            for kj, lz in zip(comp, ln_az):
                if kj == 0:
                    continue
                if lz is None:
                    skip = True
                    break
                coef_log -= log_gamma(kj + 1.0)
                pow_log += kj * lz
            if skip:
                continue
            x = b0 + sum(bj * kj for bj, kj in zip(bs, comp))
            logr, sgn = _log_rgamma(x)
            if sgn == 0.0:
                continue
            tlog = coef_log + pow_log + logr
            peak_log = max(peak_log, tlog)
            if tlog > 700.0:
                overflow = True
                break
            terms.append(math.exp(tlog) * sgn)
        if overflow:
            return math.nan, peak_log, False
        shell = math.fsum(terms)
        acc.add(shell if k % 2 == 0 else -shell)
        if abs(shell) <= 1e-17 * max(abs(acc.s), 1e-300):
            quiet += 1
            if quiet >= 2:
                converged = True
                break
        else:
            quiet = 0
    return acc.s, peak_log, converged


# memo of Gamma values from the extended-precision path, keyed by working
# precision and exact argument; neighbouring integer-offset arguments are
# served by the recurrence Gamma(x) = (x-1) Gamma(x-1).  The S1/S2 kernel
# pair at one evaluation point walks the same argument lattice offset by
# exactly one, so the second member costs almost nothing.  Access happens
# only under _MP_LOCK.
_GAMMA_MEMO: dict = {}
_GAMMA_MEMO_CAP = 400_000


def _gamma_memo(mp, x):
    key = (mp.prec, x)
    v = _GAMMA_MEMO.get(key)
    if v is None:
        down = _GAMMA_MEMO.get((mp.prec, x - 1))
        if down is not None:
            v = (x - 1) * down
        else:
            up = _GAMMA_MEMO.get((mp.prec, x + 1))
            v = up / x if up is not None else mp.gamma(x)
        if len(_GAMMA_MEMO) >= _GAMMA_MEMO_CAP:
            _GAMMA_MEMO.clear()
        _GAMMA_MEMO[key] = v
    return v


def _mml_mp(args: MLArgs, rel_tol: float) -> float:
    b0, bs, zs = args.beta0, args.betas, args.zs
    m = args.m
    shell_cap = 30000 if m == 1 else (2000 if m == 2 else 600)
    peak_guess = _log_peak_scan(b0, bs, zs, shell_cap)
    fact: list[int] = [1]

    def factorial(j: int) -> int:
        while len(fact) <= j:
            fact.append(fact[-1] * len(fact))
        return fact[j]

    ln_az = [math.log(-z) if z < 0.0 else -math.inf for z in zs]

    def summer(mp, dps):
        mb0 = mp.mpf(b0)
        mbs = [mp.mpf(b) for b in bs]
        mzs = [mp.mpf(z) for z in zs]
        powers: list[list] = [[mp.mpf(1)] for _ in range(m)]
        bmul: list[list] = [[mp.mpf(0)] for _ in range(m)]
        total = mp.mpf(0)
        peak_ln = -math.inf
        quiet = 0
        for k in range(shell_cap + 1):
            for j in range(m):
                while len(powers[j]) <= k:
                    powers[j].append(powers[j][-1] * mzs[j])
                    bmul[j].append(mbs[j] * len(bmul[j]))
            # double-precision log magnitudes decide which terms matter at
            # the working precision; only those are computed in mp
            lgk = log_gamma(k + 1.0)
            comp_logs: list[tuple[tuple[int, ...], float]] = []
            shell_max_ln = -math.inf
            for comp in _compositions(k, m):
                coef_log = lgk
                pow_log = 0.0
                skip = False
                for kj, lz in zip(comp, ln_az):
                    if kj == 0:
                        continue
                    if lz == -math.inf:
                        skip = True
                        break
                    coef_log -= log_gamma(kj + 1.0)
                    pow_log += kj * lz
                if skip:
                    continue
                logr, sgn = _log_rgamma(b0 + sum(bj * kj for bj, kj in zip(bs, comp)))
                if sgn == 0.0:
                    continue
                tlog = coef_log + pow_log + logr
                comp_logs.append((comp, tlog))
                shell_max_ln = max(shell_max_ln, tlog)
            peak_ln = max(peak_ln, shell_max_ln)
            # terms below the working-precision noise floor (relative to the
            # largest term seen) cannot move the certified result; a tighter,
            # result-scale cut is unsafe because the partial sum overstates
            # the result by many decades during the cancellation plateau
            noise_ln = peak_ln - (dps - 4) * _LN10
            size_ln = math.log(max(len(comp_logs), 1))
            if shell_max_ln + size_ln < noise_ln:
                quiet += 1
                if quiet >= 2 and k >= 4:
                    return total, peak_ln, True
                continue
            quiet = 0
            shell = mp.mpf(0)
            cut = noise_ln - size_ln - 8.0
            kfac = factorial(k)
            for comp, tlog in comp_logs:
                if tlog < cut:
                    continue
                coef = kfac
                arg = mb0
                prod = None
                for j, kj in enumerate(comp):
                    if kj:
                        coef //= factorial(kj)
                        arg += bmul[j][kj]
                        prod = powers[j][kj] if prod is None else prod * powers[j][kj]
                prod = mp.mpf(coef) if prod is None else prod * coef
                shell += prod / _gamma_memo(mp, arg)
            total += shell
        return total, peak_ln, False

    return _mp_sum_with_retry(f"mml(beta0={b0}, zs={zs})", peak_guess, summer, rel_tol)


def mml(args: MLArgs, *, rel_tol: float = 1e-10, kmax: int = DEFAULT_SHELL_CAP) -> float:
    """Multinomial Mittag-Leffler function for non-positive real arguments.

    Double-precision k-shell summation truncated at kmax with early stop once
    a whole shell contributes below 1e-16 of the partial sum; falls back to
    extended precision when the cancellation certificate fails.
    """
    if all(z == 0.0 for z in args.zs):
        logr, sgn = _log_rgamma(args.beta0)
        return sgn * math.exp(logr) if sgn != 0.0 else 0.0
    value, peak_log, converged = _mml_double(args, kmax)
    if converged and _certified(value, peak_log, rel_tol):
        return value
    return _mml_mp(args, rel_tol)


# ---------------------------------------------------------------------------
# relaxation kernels, series route
# ---------------------------------------------------------------------------


def _require_normalized(spec: OrderSpec) -> None:
    if abs(spec.weights[-1] - 1.0) > 1e-12:
        raise DomainError(
            "kernel series require the leading weight normalized to 1; "
            "apply normalize_spec first"
        )


def _kernel_ml_args(lam: float, spec: OrderSpec, t: float, beta0: float) -> MLArgs:
    an = spec.alphas[-1]
    betas = [an]
    zs = [-lam * t**an]
    for ai, ri in zip(spec.alphas[:-1], spec.weights[:-1]):
        betas.append(an - ai)
        zs.append(-ri * t ** (an - ai))
    return MLArgs(beta0, tuple(betas), tuple(zs))


def _check_kernel_inputs(lam: float, t: float) -> None:
    if not lam > 0.0:
        raise DomainError(f"lambda must be positive, got {lam}")
    if not t > 0.0:
        raise DomainError(f"t must be positive, got {t}")


def s1_kernel_series(
    lam: float,
    spec: OrderSpec,
    t: float,
    *,
    rel_tol: float = 1e-10,
    kmax: int = DEFAULT_SHELL_CAP,
) -> float:
    """Mode relaxation factor S1(t): response of a unit initial datum."""
    _check_kernel_inputs(lam, t)
    _require_normalized(spec)
    an = spec.alphas[-1]
    e = mml(_kernel_ml_args(lam, spec, t, 1.0 + an), rel_tol=rel_tol, kmax=kmax)
    return 1.0 - lam * t**an * e


def s2_kernel_series(
    lam: float,
    spec: OrderSpec,
    t: float,
    *,
    rel_tol: float = 1e-10,
    kmax: int = DEFAULT_SHELL_CAP,
) -> float:
    """Impulse-response kernel S2(t) of the forced problem."""
    _check_kernel_inputs(lam, t)
    _require_normalized(spec)
    an = spec.alphas[-1]
    e = mml(_kernel_ml_args(lam, spec, t, an), rel_tol=rel_tol, kmax=kmax)
    return t ** (an - 1.0) * e


def s2_kernel_int_series(
    lam: float,
    spec: OrderSpec,
    a: float,
    t: float,
    *,
    rel_tol: float = 1e-10,
    kmax: int = DEFAULT_SHELL_CAP,
) -> float:
    """Convolution of S2 with the power-law factor s^a / Gamma(a+1).

    For a = 0 this is the running integral of S2.
    """
    if not 0.0 <= a <= 1.0:
        raise DomainError(f"a must lie in [0, 1], got {a}")
    _check_kernel_inputs(lam, t)
    _require_normalized(spec)
    an = spec.alphas[-1]
    e = mml(_kernel_ml_args(lam, spec, t, an + a + 1.0), rel_tol=rel_tol, kmax=kmax)
    return t ** (an + a) * e


# ---------------------------------------------------------------------------
# relaxation kernels, contour route
# ---------------------------------------------------------------------------

_RMAX_LOG = -math.log(1e-18)


def default_contour(t: float) -> ContourSpec:
    """Desk-accuracy default: theta = 5 pi / 6, delta = max(1, 1/t), radial
    truncation where exp(t r cos theta) falls below 1e-18."""
    if not t > 0.0:
        raise DomainError(f"t must be positive, got {t}")
    theta = 5.0 * math.pi / 6.0
    delta = max(1.0, 1.0 / t)
    r_max = max(_RMAX_LOG / (t * abs(math.cos(theta))), 2.0 * delta)
    return ContourSpec(theta=theta, delta=delta, n_radial=400, r_max=r_max)


def tight_contour(t: float, n_radial: int = 4000) -> ContourSpec:
    """Refined contour for oracle-grade agreement checks."""
    base = default_contour(t)
    return ContourSpec(base.theta, base.delta, n_radial, base.r_max)


def _sum_powers(p: np.ndarray, spec: OrderSpec, shift: float) -> np.ndarray:
    acc = np.zeros_like(p)
    for ak, rk in zip(spec.alphas, spec.weights):
        acc = acc + rk * p ** (ak + shift)
    return acc


def _contour_integral(lam, spec, t, contour, which: str) -> float:
    def integrand(p: np.ndarray) -> np.ndarray:
        den = lam + _sum_powers(p, spec, 0.0)
        if which == "s1":
            return np.exp(t * p) * _sum_powers(p, spec, -1.0) / den
        return np.exp(t * p) / den

    theta, delta, n, r_max = contour.theta, contour.delta, contour.n_radial, contour.r_max
    eith = complex(math.cos(theta), math.sin(theta))

    # outgoing ray, composite trapezoid on geometrically graded nodes;
    # the incoming ray is its conjugate, so the pair contributes Im(.)/pi
    r = delta * (r_max / delta) ** (np.arange(n + 1) / n)
    fray = integrand(r * eith) * eith
    seg = 0.5 * (fray[1:] + fray[:-1]) * np.diff(r)
    ray_part = float(np.imag(np.sum(seg))) / math.pi

    # arc, midpoint rule on [0, theta] doubled by conjugate symmetry
    n_arc = max(64, 2 * n)
    phi = (np.arange(n_arc) + 0.5) * (theta / n_arc)
    parc = delta * np.exp(1j * phi)
    garc = integrand(parc) * np.exp(1j * phi)
    arc_part = delta / math.pi * float(np.sum(np.real(garc))) * (theta / n_arc)

    total = ray_part + arc_part
    tail = abs(seg[-1]) / math.pi
    if tail > 1e-8 * max(abs(total), 1e-300):
        raise AccuracyError(
            f"contour truncation remainder {tail:.3e} exceeds 1e-8 of |result| "
            f"{abs(total):.3e}; enlarge r_max"
        )
    return total


def s1_kernel_contour(
    lam: float, spec: OrderSpec, t: float, contour: ContourSpec | None = None
) -> float:
    """Contour quadrature of the S1 kernel (initial-datum response)."""
    _check_kernel_inputs(lam, t)
    if contour is None:
        contour = default_contour(t)
    return _contour_integral(lam, spec, t, contour, "s1")


def s2_kernel_contour(
    lam: float, spec: OrderSpec, t: float, contour: ContourSpec | None = None
) -> float:
    """Contour quadrature of the S2 kernel (forcing response)."""
    _check_kernel_inputs(lam, t)
    if contour is None:
        contour = default_contour(t)
    return _contour_integral(lam, spec, t, contour, "s2")


def series_tail_log(args: MLArgs, k: int = DEFAULT_SHELL_CAP) -> float:
    """Log magnitude of the largest term in shell k (coarse sample).

    A strongly negative value means the truncated series has converged well
    before shell k; used to route evaluations to the contour kernels when
    the series would still be live at the truncation index.
    """
    b0, bs, zs = args.beta0, args.betas, args.zs
    m = args.m
    lnz = [math.log(-z) if z < 0.0 else -math.inf for z in zs]
    if m == 1:
        comps = [(k,)]
    elif m == 2:
        comps = [(k1, k - k1) for k1 in sorted({round(k * i / 16.0) for i in range(17)})]
    else:
        comps = [tuple(k if j == i else 0 for j in range(m)) for i in range(m)]
        comps.append(tuple(k // m for _ in range(m - 1)) + (k - (m - 1) * (k // m),))
    best = -math.inf
    lgk = log_gamma(k + 1.0)
    for comp in comps:
        tlog = lgk
        dead = False
        for kj, lz in zip(comp, lnz):
            if kj == 0:
                continue
            if lz == -math.inf:
                dead = True
                break
            tlog += kj * lz - log_gamma(kj + 1.0)
        if dead:
            continue
        logr, sgn = _log_rgamma(b0 + sum(bj * kj for bj, kj in zip(bs, comp)))
        if sgn == 0.0:
            continue
        best = max(best, tlog + logr)
    return best
