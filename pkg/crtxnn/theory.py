"""
Numeric checks of the reflection bound.

Wrong-set errors are assumed to lie in [epsilon, t * epsilon]. Reflecting with k
specialists leaves each wrong sample with a residual of at most (t - 1) * epsilon / k,
so the loss drops by R = sum(error^2) - N * ((t - 1) / k)^2. Every quantity here is
in units of epsilon^2; multiply by epsilon^2 for an absolute reduction.
"""
import dataclasses
import math
import statistics
import typing

import numpy as np
import pandas as pd
from prefect.utilities.logging import get_logger

from crtxnn.seeding import rng

logger = get_logger("crtxnn.theory")

UNIFORM = "uniform"
TRUNCATED_NORMAL = "truncnormal"

# Standard errors a Monte Carlo estimate may sit from the exact mean.
DEFAULT_AGREEMENT_Z = 3.0


@dataclasses.dataclass(frozen=True)
class BoundParams:
    t: float
    k: int
    n: int
    epsilon: float = 1.0

    def __post_init__(self):
        values = (self.t, self.k, self.n, self.epsilon)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"bound parameters must be finite, got {values}")
        if self.t <= 1:
            raise ValueError(f"t must exceed 1, got {self.t}")
        if self.k < 1 or self.n < 1:
            raise ValueError(f"k and N must be >= 1, got k={self.k}, N={self.n}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


@dataclasses.dataclass(frozen=True)
class BoundConditions:
    matched_k: bool
    asymptotic: bool
    lhs: float
    rhs: float


@dataclasses.dataclass(frozen=True)
class BoundReport:
    params: BoundParams
    r_analytic: float
    r_expected: float
    r_monte_carlo: float
    standard_error: float
    conditions: BoundConditions

    @property
    def branch(self) -> str:
        if self.conditions.matched_k:
            return "k=t-1,N>2"
        if self.conditions.asymptotic:
            return "asymptotic"
        return "none"

    def monte_carlo_agrees(self, z: float = DEFAULT_AGREEMENT_Z) -> bool:
        """Whether the estimate lies within ``z`` standard errors of the exact mean."""
        return abs(self.r_monte_carlo - self.r_expected) <= z * self.standard_error + 1e-9 * max(1.0, abs(self.r_expected))


def _residual(p: BoundParams) -> float:
    return p.n * ((p.t - 1) / p.k) ** 2


def expected_reduction(p: BoundParams) -> float:
    """sum_{i=1..N} (1 + (t - 1) i / N)^2 - N ((t - 1) / k)^2, in units of epsilon^2."""
    i = np.arange(1, p.n + 1, dtype=np.float64)
    return float(((1 + (p.t - 1) / p.n * i) ** 2).sum() - _residual(p))


def uniform_expected_reduction(p: BoundParams) -> float:
    """
    The exact mean of the reduction when the N errors are i.i.d. uniform on
    [epsilon, t * epsilon]. ``expected_reduction`` is the right-endpoint sum of the same
    integral and exceeds this by (t - 1) + (t - 1)^2 (3N + 1) / (6N).
    """
    return p.n * (p.t ** 2 + p.t + 1) / 3.0 - _residual(p)


def distribution_expected_reduction(p: BoundParams, distribution: str = UNIFORM) -> float:
    """
    Exact mean reduction for errors drawn as in ``monte_carlo_reduction``: uniform on
    [epsilon, t * epsilon], or a normal centred on the interval with sigma a quarter of
    its width, truncated to it.
    """
    if distribution == UNIFORM:
        return uniform_expected_reduction(p)
    if distribution == TRUNCATED_NORMAL:
        centre, spread = (1 + p.t) / 2.0, (p.t - 1) / 4.0
        standard = statistics.NormalDist()
        mass = standard.cdf(2.0) - standard.cdf(-2.0)
        variance = spread ** 2 * (1 - 2 * 2.0 * standard.pdf(2.0) / mass)
        return p.n * (centre ** 2 + variance) - _residual(p)
    raise ValueError(f"unknown error distribution {distribution!r}")


def riemann_gap(p: BoundParams) -> float:
    return (p.t - 1) + (p.t - 1) ** 2 * (3 * p.n + 1) / (6.0 * p.n)


def conditions_hold(p: BoundParams) -> BoundConditions:
    """
    The two sufficient conditions for a positive reduction, evaluated as stated:
    ``k = t - 1 and N > 2``, and ``k > 1 and 4 / (3 k^2) < ((86 - t) t - 73) / (36 (t - 1)^2)``.
    """
    lhs = 4.0 / (3.0 * p.k ** 2)
    rhs = ((86 - p.t) * p.t - 73) / (36.0 * (p.t - 1) ** 2)
    return BoundConditions(
        matched_k=math.isclose(p.k, p.t - 1) and p.n > 2,
        asymptotic=p.k > 1 and lhs < rhs,
        lhs=lhs,
        rhs=rhs,
    )


def _draw_errors(p: BoundParams, samples: int, distribution: str, generator: np.random.Generator) -> np.ndarray:
    low, high = p.epsilon, p.t * p.epsilon
    shape = (samples, p.n)
    if distribution == UNIFORM:
        return generator.uniform(low, high, size=shape)
    if distribution == TRUNCATED_NORMAL:
        centre, spread = (low + high) / 2.0, (high - low) / 4.0
        draws = generator.normal(centre, spread, size=shape)
        outside = (draws < low) | (draws >= high)
        while outside.any():
            draws[outside] = generator.normal(centre, spread, size=int(outside.sum()))
            outside = (draws < low) | (draws >= high)
        return draws
    raise ValueError(f"unknown error distribution {distribution!r}")


def monte_carlo_reduction(
        p: BoundParams,
        samples: int = 1000,
        seed: int = 0,
        distribution: str = UNIFORM
) -> typing.Tuple[float, float]:
    """
    Mean and standard error, over ``samples`` trials, of sum(error^2) minus the
    post-reflection residual N ((t - 1) epsilon / k)^2, with N errors drawn per trial.
    Returned in units of epsilon^2.
    """
    if samples < 100:
        raise ValueError(f"need at least 100 Monte Carlo samples, got {samples}")
    errors = _draw_errors(p, samples, distribution, rng(seed, "monte-carlo", distribution, f"{p.t:g}", p.k, p.n))
    residual = p.n * ((p.t - 1) * p.epsilon / p.k) ** 2
    reductions = ((errors ** 2).sum(axis=1) - residual) / p.epsilon ** 2
    return float(reductions.mean()), float(reductions.std(ddof=1) / np.sqrt(samples))


def bound_report(p: BoundParams, samples: int = 1000, seed: int = 0, distribution: str = UNIFORM) -> BoundReport:
    estimate, standard_error = monte_carlo_reduction(p, samples, seed, distribution)
    return BoundReport(
        params=p,
        r_analytic=expected_reduction(p),
        r_expected=distribution_expected_reduction(p, distribution),
        r_monte_carlo=estimate,
        standard_error=standard_error,
        conditions=conditions_hold(p),
    )


def default_k(t: float) -> int:
    """round(t - 1) with halves rounded up, at least 1."""
    return max(1, int(math.floor(t - 0.5)))


def default_t_values() -> typing.List[float]:
    return [2.0 + 0.5 * i for i in range(17)]


def bound_grid(
        t_values: typing.Sequence[float],
        n_values: typing.Sequence[int],
        samples: int = 1000,
        seed: int = 0,
        distribution: str = UNIFORM,
        k_values: typing.Optional[typing.Sequence[int]] = None,
        z: float = DEFAULT_AGREEMENT_Z
) -> pd.DataFrame:
    """
    Evaluate the bound on a (t, k, N) grid. Without ``k_values`` each t uses
    ``k = default_k(t)``; with them every listed k is checked for every t.
    A row is a counterexample when a stated sufficient condition holds but the
    analytic reduction is not positive. A cell disagrees when its Monte Carlo
    estimate is more than ``z`` standard errors from the exact mean; such cells are
    logged one by one.
    """
    cells = [
        BoundParams(t=float(t), k=int(k), n=int(n))
        for t in t_values
        for k in (k_values if k_values is not None else [default_k(t)])
        for n in n_values
    ]
    rows = []
    for p in cells:
        report = bound_report(p, samples, seed, distribution)
        conditions = report.conditions
        rows.append({
            "t": p.t,
            "k": p.k,
            "N": p.n,
            "r_analytic": report.r_analytic,
            "r_expected": report.r_expected,
            "r_mc": report.r_monte_carlo,
            "se": report.standard_error,
            "riemann_gap": riemann_gap(p),
            "first_condition": conditions.matched_k,
            "second_condition": conditions.asymptotic,
            "lhs": conditions.lhs,
            "rhs": conditions.rhs,
            "branch": report.branch,
            "mc_z": z,
            "mc_agrees": report.monte_carlo_agrees(z),
            "counterexample": (conditions.matched_k or conditions.asymptotic) and report.r_analytic <= 0,
        })
    frame = pd.DataFrame(rows)
    if len(frame):
        logger.info("bound grid: %d cell(s), %d counterexample(s), %d Monte Carlo disagreement(s)",
                    len(frame), int(frame["counterexample"].sum()), int((~frame["mc_agrees"]).sum()))
        for row in frame[~frame["mc_agrees"]].itertuples(index=False):
            logger.warning("Monte Carlo disagreement at t=%g k=%d N=%d: r_mc %.6g vs r_expected %.6g (se %.3g, %.2f se apart)",
                           row.t, row.k, row.N, row.r_mc, row.r_expected, row.se, abs(row.r_mc - row.r_expected) / row.se)
    return frame
