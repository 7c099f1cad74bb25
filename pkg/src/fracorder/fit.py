"""Box-constrained nonlinear least-squares recovery of (c, beta).

The driver is a hand-rolled projected limited-memory BFGS: two-loop recursion
for the search direction, projection of trial points onto the exponent box,
backtracking line search with sufficient decrease along the projected path,
and an alternation step that re-solves the amplitudes by linear least squares
whenever the exponents have drifted.

The reported objective is the quadrature form

    J = (1/2) (T0/n) sum_k (g(t_k) - f(t_k))^2 .

Internally the optimizer works on J divided by (T0 * Var(g)), a constant
positive multiple with the same minimizers.  Without that normalization a
fixed gradient tolerance would be meaningless across time horizons spanning
seven decades: at T0 = 1e-8 the raw objective and its gradient are of order
1e-20 at the starting point already.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from fracorder.forward import Case, TraceSample
from fracorder.models import (
    IdentifiabilityError,
    Kind,
    ModelParams,
    PhysicalParams,
    _eval_arrays,
    _grad_arrays,
    n_coeffs,
    to_physical,
)
from fracorder.specfun import DomainError

__all__ = [
    "FitConfig",
    "FitResult",
    "LinearInit",
    "RankDeficiencyError",
    "NumericsError",
    "objective",
    "objective_grad",
    "linear_init",
    "minimize",
    "recover",
    "beta_init_from_alphas",
]

# line search constants: halving factor, sufficient-decrease slope, max halvings
_LS_FACTOR = 0.5
_LS_C1 = 1e-4
_LS_MAX = 40
# exponent drift (per coordinate) that triggers a linear re-solve of c
_REINIT_DRIFT = 0.05
_COND_LIMIT = 1e12


class RankDeficiencyError(ValueError):
    """Design matrix numerically rank deficient for the requested exponents."""


class NumericsError(ArithmeticError):
    """Objective evaluated to NaN/Inf where a finite value is required."""


@dataclass(frozen=True)
class FitConfig:
    kind: Kind
    case: Case
    n_terms: int
    beta_init: tuple[float, ...]
    beta_bounds: tuple[tuple[float, float], ...] | None = None
    max_iter: int = 200
    memory: int = 10
    grad_tol: float = 1e-10
    min_gap: float = 1e-3
    multi_start: int = 0
    source_exponent: float = 0.0
    # smallest peak contribution of the trailing term, relative to the leading
    # term, for the trailing term to count as resolved by the data
    second_term_min_rel: float = 0.03

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta_init", tuple(float(b) for b in self.beta_init))
        if self.n_terms not in (1, 2):
            raise DomainError("n_terms must be 1 or 2")
        if len(self.beta_init) != self.n_terms:
            raise DomainError("beta_init length must equal n_terms")
        bounds = self.beta_bounds
        if bounds is None:
            bounds = tuple((0.01, 1.99) for _ in range(self.n_terms))
        else:
            bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        object.__setattr__(self, "beta_bounds", bounds)
        if len(bounds) != self.n_terms:
            raise DomainError("beta_bounds length must equal n_terms")
        for (lo, hi), b in zip(bounds, self.beta_init):
            if not (0.0 < lo <= hi < 2.0):
                raise DomainError(f"bounds must satisfy 0 < lo <= hi < 2, got ({lo}, {hi})")
            if not lo <= b <= hi:
                raise DomainError(f"beta_init {b} outside bounds ({lo}, {hi})")
        if self.max_iter < 1 or self.memory < 1:
            raise DomainError("max_iter and memory must be positive")
        if not 0.0 <= self.source_exponent <= 1.0:
            raise DomainError("source_exponent must lie in [0, 1]")


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    physical: PhysicalParams | None
    T0: float
    objective: float
    iterations: int
    converged: bool
    grad_norm: float
    history: tuple[float, ...] = ()
    assumptions: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        phys = self.physical
        return {
            "kind": self.params.kind.value,
            "case": self.params.case.value,
            "T0": self.T0,
            "beta": list(self.params.beta),
            "c": list(self.params.c),
            "alpha": list(phys.alphas) if phys else None,
            "r": list(phys.weights) if phys else None,
            "amplitude": phys.amplitude if phys else None,
            "constant": phys.constant if phys else None,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "assumptions": list(self.assumptions),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


class LinearInit(NamedTuple):
    c: np.ndarray
    residual: float  # RMS misfit of the linearized regression
    cond: float


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def objective(sample: TraceSample, params: ModelParams) -> float:
    """Quadrature discretization of the squared L2(0, T0) misfit."""
    n = len(sample)
    f = _eval_arrays(params.kind, params.case, params.c, params.beta, sample.times)
    r = f - sample.values
    return 0.5 * (sample.T0 / n) * float(r @ r)


def objective_grad(sample: TraceSample, params: ModelParams) -> np.ndarray:
    """Gradient of the objective over (c..., beta...)."""
    n = len(sample)
    f = _eval_arrays(params.kind, params.case, params.c, params.beta, sample.times)
    g = _grad_arrays(params.kind, params.case, params.c, params.beta, sample.times)
    r = f - sample.values
    return (sample.T0 / n) * (g @ r)


# ---------------------------------------------------------------------------
# linear amplitude initialization
# ---------------------------------------------------------------------------


def _lstsq_columns(columns: list[np.ndarray], y: np.ndarray, beta, min_gap: float):
    design = np.column_stack(columns)
    norms = np.sqrt(np.sum(design * design, axis=0))
    norms[norms == 0.0] = 1.0
    scaled = design / norms
    cond = float(np.linalg.cond(scaled))
    gaps = np.diff(np.asarray(beta, dtype=float))
    if cond > _COND_LIMIT and len(gaps) and float(np.min(gaps)) < min_gap:
        raise RankDeficiencyError(
            f"exponents {tuple(beta)} closer than {min_gap} give condition "
            f"number {cond:.3e}"
        )
    coef, *_ = np.linalg.lstsq(scaled, y, rcond=None)
    c = coef / norms
    resid = float(np.sqrt(np.mean((scaled @ coef - y) ** 2)))
    return c, resid, cond


def linear_init(
    sample: TraceSample,
    beta: tuple[float, ...],
    kind: Kind,
    case: Case,
    *,
    min_gap: float = 1e-3,
) -> LinearInit:
    """Amplitudes for fixed exponents by (linearized) linear least squares.

    Polynomial kinds are solved exactly.  For the rational kinds the problem
    is linearized: initial data regresses 1/g - 1/c0 on the power columns
    with c0 estimated from the first sample; source regresses g / (cA - g)
    with cA taken from a preliminary polynomial fit.
    """
    t = sample.times
    g = sample.values
    powers = [t**b for b in beta]
    if kind is Kind.POLYNOMIAL:
        cols = list(powers)
        if case is Case.INITIAL_DATA:
            cols = [np.ones_like(t)] + cols
        c, resid, cond = _lstsq_columns(cols, g, beta, min_gap)
        return LinearInit(c, resid, cond)
    if case is Case.INITIAL_DATA:
        c0 = float(g[0])
        if c0 == 0.0 or np.any(g == 0.0):
            raise RankDeficiencyError("rational initial-data regression needs g != 0")
        y = 1.0 / g - 1.0 / c0
        d, resid, cond = _lstsq_columns(powers, y, beta, min_gap)
        # the regression fits D / c0, so rescale to the stored denominators
        return LinearInit(np.concatenate(([c0], c0 * d)), resid, cond)
    # rational source: amplitude scale from a preliminary polynomial fit
    cpoly, _, _ = _lstsq_columns(list(powers), g, beta, min_gap)
    ca = float(cpoly[0]) * math.gamma(beta[0] + 1.0)
    gmax = float(np.max(np.abs(g)))
    if gmax == 0.0:
        raise RankDeficiencyError("rational source regression needs nonzero data")
    ca = max(ca, (1.0 + 1e-3) * gmax)
    y = g / (ca - g)
    d, resid, cond = _lstsq_columns(powers, y, beta, min_gap)
    return LinearInit(np.concatenate(([ca], d)), resid, cond)


# ---------------------------------------------------------------------------
# projected limited-memory BFGS
# ---------------------------------------------------------------------------


def _two_loop(grad: np.ndarray, s_list, y_list) -> np.ndarray:
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(s_list), reversed(y_list)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y), a in zip(zip(s_list, y_list), reversed(alphas)):
        rho = 1.0 / float(y @ s)
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def _sorted_exit_params(
    kind: Kind, case: Case, c: np.ndarray, beta: np.ndarray, config: FitConfig
) -> ModelParams:
    """Sort exponents ascending (permuting their amplitudes), enforce the
    minimum gap, and clip into the open (0, 2) range required of the model."""
    nb = len(beta)
    n_amp_head = n_coeffs(kind, case, nb) - nb
    head = list(c[:n_amp_head])
    amps = list(c[n_amp_head:])
    order = sorted(range(nb), key=lambda i: beta[i])
    beta_sorted = [float(beta[i]) for i in order]
    amps_sorted = [float(amps[i]) for i in order]
    for i in range(1, nb):
        if beta_sorted[i] < beta_sorted[i - 1] + config.min_gap:
            beta_sorted[i] = beta_sorted[i - 1] + config.min_gap
    beta_sorted = [min(max(b, 1e-6), 2.0 - 1e-6) for b in beta_sorted]
    return ModelParams(kind, case, tuple(head + amps_sorted), tuple(beta_sorted))


def minimize(sample: TraceSample, config: FitConfig) -> FitResult:
    """Projected quasi-Newton fit of (c, beta) on the given sample."""
    kind, case, m = config.kind, config.case, config.n_terms
    t = sample.times
    g = sample.values
    n = len(sample)
    nc = n_coeffs(kind, case, m)

    gbar = float(np.mean(g))
    var = float(np.mean((g - gbar) ** 2))
    norm = var if var > 0.0 else max(1.0, gbar * gbar)
    # pinned objective = jtilde * T0 * norm
    j_scale = sample.T0 * norm

    def f_and_g(x: np.ndarray) -> tuple[float, np.ndarray]:
        c, beta = x[:nc], x[nc:]
        f = _eval_arrays(kind, case, c, beta, t)
        r = f - g
        jt = 0.5 * float(r @ r) / (n * norm)
        if not math.isfinite(jt):
            return math.inf, np.full(nc + m, math.nan)
        grad = _grad_arrays(kind, case, c, beta, t) @ r / (n * norm)
        return jt, grad

    beta0 = np.clip(
        np.asarray(config.beta_init, dtype=float),
        [lo for lo, _ in config.beta_bounds],
        [hi for _, hi in config.beta_bounds],
    )
    c0 = linear_init(sample, tuple(beta0), kind, case, min_gap=config.min_gap).c
    x = np.concatenate([c0, beta0])

    lo = np.concatenate([np.full(nc, -np.inf), [b[0] for b in config.beta_bounds]])
    hi = np.concatenate([np.full(nc, np.inf), [b[1] for b in config.beta_bounds]])

    jt, gx = f_and_g(x)
    if not math.isfinite(jt) or not np.all(np.isfinite(gx)):
        raise NumericsError(
            f"objective not finite at the initial point (beta={tuple(beta0)})"
        )

    # freeze a diagonal scaling from the Gauss-Newton diagonal at the start;
    # without it the amplitude and exponent directions differ by many decades
    gn = _grad_arrays(kind, case, x[:nc], x[nc:], t)
    diag = np.sqrt(np.mean(gn * gn, axis=1) / norm)
    dmax = float(np.max(diag)) if np.any(diag > 0.0) else 1.0
    scale = np.maximum(diag, max(1e-10 * dmax, 1e-12))

    y = x * scale
    lo_y, hi_y = lo * scale, hi * scale
    # -inf * 0 guards (scale is strictly positive, so this is just paranoia)
    gy = gx / scale

    def proj_grad(yv: np.ndarray, gv: np.ndarray) -> np.ndarray:
        return yv - np.clip(yv - gv, lo_y, hi_y)

    s_mem: list[np.ndarray] = []
    y_mem: list[np.ndarray] = []
    history = [jt]
    beta_ref = x[nc:].copy()
    iterations = 0
    converged = False
    line_search_failed = False

    while iterations < config.max_iter:
        pg = proj_grad(y, gy)
        if float(np.max(np.abs(pg))) < config.grad_tol:
            converged = True
            break
        d = -_two_loop(gy, s_mem, y_mem)
        dg = float(d @ gy)
        if not math.isfinite(dg) or dg > -1e-14 * float(
            np.linalg.norm(d) * np.linalg.norm(gy)
        ):
            d = -gy
            s_mem.clear()
            y_mem.clear()
        alpha = 1.0
        accepted = False
        for _ in range(_LS_MAX):
            y_new = np.clip(y + alpha * d, lo_y, hi_y)
            step = y_new - y
            if float(np.max(np.abs(step))) == 0.0:
                break
            jt_new, gx_new = f_and_g(y_new / scale)
            slope = min(0.0, float(gy @ step))
            if math.isfinite(jt_new) and jt_new <= jt + _LS_C1 * slope:
                accepted = True
                break
            alpha *= _LS_FACTOR
        if not accepted:
            line_search_failed = True
            break
        gy_new = gx_new / scale
        s_vec = y_new - y
        y_vec = gy_new - gy
        sy = float(s_vec @ y_vec)
        if sy > 1e-12 * float(np.linalg.norm(s_vec) * np.linalg.norm(y_vec)):
            s_mem.append(s_vec)
            y_mem.append(y_vec)
            if len(s_mem) > config.memory:
                s_mem.pop(0)
                y_mem.pop(0)
        y, jt, gy = y_new, jt_new, gy_new
        iterations += 1
        history.append(jt)
        assert np.all(y[nc:] >= lo_y[nc:] - 1e-12) and np.all(
            y[nc:] <= hi_y[nc:] + 1e-12
        ), "exponent iterate escaped its box"

        beta_cur = (y / scale)[nc:]
        if float(np.max(np.abs(beta_cur - beta_ref))) > _REINIT_DRIFT:
            try:
                c_cand = linear_init(
                    sample, tuple(beta_cur), kind, case, min_gap=config.min_gap
                ).c
            except RankDeficiencyError:
                c_cand = None
            if c_cand is not None and np.all(np.isfinite(c_cand)):
                x_try = np.concatenate([c_cand, beta_cur])
                jt_try, gx_try = f_and_g(x_try)
                if math.isfinite(jt_try) and jt_try < jt:
                    y = x_try * scale
                    jt = jt_try
                    gy = gx_try / scale
                    s_mem.clear()
                    y_mem.clear()
                    history.append(jt)
            beta_ref = beta_cur.copy()

    pg = proj_grad(y, gy)
    grad_norm = float(np.max(np.abs(pg)))
    if line_search_failed and grad_norm < max(config.grad_tol, 1e2 * config.grad_tol):
        converged = True
    x_final = y / scale
    params = _sorted_exit_params(kind, case, x_final[:nc], x_final[nc:], config)
    return FitResult(
        params=params,
        physical=None,
        T0=sample.T0,
        objective=objective(sample, params),
        iterations=iterations,
        converged=converged,
        grad_norm=grad_norm,
        history=tuple(j * j_scale for j in history),
    )


# ---------------------------------------------------------------------------
# staged recovery with model-order gate
# ---------------------------------------------------------------------------


def beta_init_from_alphas(
    alphas: tuple[float, ...], a: float = 0.0, case: Case = Case.INITIAL_DATA
) -> tuple[float, ...]:
    """Exponent initialization implied by an order guess (alpha_1[, alpha_N])."""
    shift = a if case is Case.SOURCE else 0.0
    if len(alphas) == 1:
        return (alphas[0] + shift,)
    a1, an = alphas
    return (an + shift, 2.0 * an - a1 + shift)


def _term_columns(params: ModelParams, t: np.ndarray) -> list[np.ndarray]:
    """Per-exponent contributions: power terms for the polynomial kinds,
    denominator components for the rational kinds."""
    if params.kind is Kind.POLYNOMIAL and params.case is Case.SOURCE:
        amps = params.c
    else:
        amps = params.c[1:]
    return [ai * t**bi for ai, bi in zip(amps, params.beta)]


def second_term_relative(sample: TraceSample, params: ModelParams) -> float:
    """Peak contribution of the trailing term relative to the leading term."""
    cols = _term_columns(params, sample.times)
    lead = float(np.max(np.abs(cols[0])))
    trail = float(np.max(np.abs(cols[-1])))
    return trail / max(lead, 1e-300)


def _embed_single_term(res1: FitResult, config: FitConfig) -> ModelParams:
    """Express a one-term fit in two-term form with zero trailing amplitude
    and the trailing exponent held at its initialization."""
    p1 = res1.params
    beta2 = config.beta_init[1]
    if beta2 < p1.beta[0] + config.min_gap:
        beta2 = p1.beta[0] + config.min_gap
    return ModelParams(p1.kind, p1.case, (*p1.c, 0.0), (p1.beta[0], beta2))


def _attach_physical(res: FitResult, config: FitConfig) -> FitResult:
    try:
        phys = to_physical(res.params, a=config.source_exponent)
    except IdentifiabilityError as exc:
        return replace(
            res,
            physical=None,
            converged=False,
            assumptions=res.assumptions + (f"identifiability: {exc}",),
        )
    return replace(res, physical=phys)


def _recover_single(sample: TraceSample, config: FitConfig) -> FitResult:
    if config.n_terms == 1:
        return _attach_physical(minimize(sample, config), config)

    cfg1 = replace(
        config,
        n_terms=1,
        beta_init=(config.beta_init[0],),
        beta_bounds=(config.beta_bounds[0],),
        multi_start=0,
    )
    res1 = minimize(sample, cfg1)
    res2 = minimize(sample, config)
    rel = second_term_relative(sample, res2.params)
    improved = res2.objective <= res1.objective * (1.0 + 1e-12)
    if improved and rel >= config.second_term_min_rel:
        note = (
            f"model-order check: second term resolved "
            f"(relative contribution {rel:.3e}; J1={res1.objective!r}, "
            f"J2={res2.objective!r})"
        )
        return _attach_physical(
            replace(res2, assumptions=res2.assumptions + (note,)), config
        )
    params = _embed_single_term(res1, config)
    note = (
        f"model-order check: second term unresolved at this horizon "
        f"(relative contribution {rel:.3e}); trailing exponent held at its "
        f"initialization {config.beta_init[1]!r} with zero amplitude "
        f"(J1={res1.objective!r}, J2={res2.objective!r})"
    )
    embedded = FitResult(
        params=params,
        physical=None,
        T0=sample.T0,
        objective=objective(sample, params),
        iterations=res1.iterations + res2.iterations,
        converged=res1.converged,
        grad_norm=res1.grad_norm,
        history=res1.history,
        assumptions=res1.assumptions + (note,),
    )
    return _attach_physical(embedded, config)


def _lattice_inits(config: FitConfig) -> list[tuple[float, ...]]:
    count = config.multi_start
    bounds = config.beta_bounds
    if config.n_terms == 1:
        lo, hi = bounds[0]
        return [(lo + (i + 0.5) * (hi - lo) / count,) for i in range(count)]
    per = max(2, math.ceil(math.sqrt(count)))
    axes = []
    for lo, hi in bounds:
        axes.append([lo + (i + 0.5) * (hi - lo) / per for i in range(per)])
    inits = [
        (b1, b2)
        for b1 in axes[0]
        for b2 in axes[1]
        if b2 > b1 + config.min_gap
    ]
    return inits[:count] if inits else [config.beta_init]


def recover(sample: TraceSample, config: FitConfig) -> FitResult:
    """Fit the sample and map the result to physical parameters.

    With two terms requested, a one-term fit is run first and the two-term
    fit is accepted only when its trailing term is actually resolved by the
    data (it lowers the objective and contributes a non-negligible fraction
    of the leading term).  Otherwise the one-term fit is reported in
    two-term form: zero trailing amplitude, trailing exponent left at its
    initialization, recorded in the assumptions list.
    """
    if config.multi_start and config.multi_start > 1:
        results = []
        for binit in _lattice_inits(config):
            cfg = replace(config, beta_init=binit, multi_start=0)
            try:
                results.append(_recover_single(sample, cfg))
            except (NumericsError, RankDeficiencyError):
                continue
        if not results:
            raise NumericsError("every multi-start initialization failed")
        best = min(range(len(results)), key=lambda i: results[i].objective)
        return results[best]
    return _recover_single(sample, config)
