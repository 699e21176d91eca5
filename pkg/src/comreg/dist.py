"""COM-Poisson distribution kernel.

The distribution P(Y=y) = lambda^y / ((y!)^nu * Z(lambda, nu)) with
normalizer Z(lambda, nu) = sum_s lambda^s / (s!)^nu.  Special cases:
Poisson (nu=1), geometric (nu=0, lambda<1), Bernoulli limit (nu -> inf
with success probability lambda/(1+lambda)).

All series arithmetic is done in the log domain; the infinite sum is
truncated adaptively (terms rise to a mode near lambda^(1/nu) and then
fall faster than geometrically).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln, logsumexp


class DivergentSeriesError(ValueError):
    """The normalizing series diverges (nu == 0 with lambda >= 1)."""


class TruncationError(RuntimeError):
    """The series truncation cap was hit before the stopping rule fired."""


@dataclass(frozen=True)
class ComParams:
    """A (lambda, nu) pair parameterizing one COM-Poisson distribution."""

    lam: float
    nu: float

    def __post_init__(self):
        if not (self.lam > 0 and np.isfinite(self.lam)):
            raise ValueError(f"lambda must be a positive finite real, got {self.lam}")
        if not (self.nu >= 0 and np.isfinite(self.nu)):
            raise ValueError(f"nu must be a nonnegative finite real, got {self.nu}")
        if self.nu == 0 and self.lam >= 1:
            raise DivergentSeriesError(
                f"nu=0 requires lambda < 1 (geometric branch); got lambda={self.lam}"
            )


@dataclass(frozen=True)
class SeriesPolicy:
    """Truncation control for the infinite normalizing series."""

    rel_tol: float = 1e-12
    max_terms: int = 10_000

    def __post_init__(self):
        if not (0 < self.rel_tol < 1):
            raise ValueError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if self.max_terms < 100:
            raise ValueError(f"max_terms must be >= 100, got {self.max_terms}")


DEFAULT_POLICY = SeriesPolicy()


def _series_mode(lam_max: float, nu: float) -> float:
    # Terms peak where s^nu ~ lambda, i.e. near lambda^(1/nu); nu=0 terms
    # are decreasing from s=0 (lambda < 1 enforced by ComParams).
    if nu == 0:
        return 0.0
    return lam_max ** (1.0 / nu)


def log_term_table(lam, nu: float, policy: SeriesPolicy = DEFAULT_POLICY):
    """Log series terms s*log(lam_i) - nu*log(s!) on a shared truncated support.

    Vectorized over an array of lambda values (shared nu), which is the
    shape the regression likelihood needs.  Returns (support, log_terms,
    log_z) where log_terms has one row per lambda and one column per
    support point, and log_z = logsumexp over columns.

    The truncation rule: the last retained term must be past the mode,
    decreasing, below rel_tol of the accumulated sum, and the geometric
    tail bound implied by the last two terms must also be below rel_tol
    of the sum.  Otherwise the support is doubled, up to max_terms.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise ValueError("all lambda values must be positive finite reals")
    if nu == 0 and np.any(lam >= 1):
        raise DivergentSeriesError("nu=0 requires lambda < 1 for every lambda")

    mode = _series_mode(float(lam.max()), nu)
    # Past the mode the terms decay roughly on the scale of the series
    # standard deviation ~ sqrt(mean/nu); pad generously before checking.
    spread = np.sqrt((mode + 1.0) / max(nu, 1e-2))
    n_terms = int(min(policy.max_terms, max(64.0, mode + 15.0 * spread + 60.0)))

    log_rel = np.log(policy.rel_tol)
    while True:
        s = np.arange(n_terms + 1, dtype=float)
        log_terms = s[None, :] * np.log(lam)[:, None] - nu * gammaln(s + 1.0)[None, :]
        log_z = logsumexp(log_terms, axis=1)

        last = log_terms[:, -1] - log_z
        prev = log_terms[:, -2] - log_z
        decreasing = last < prev
        small = last < log_rel
        # Geometric tail bound: sum_{k>=1} t_S r^k = t_S r/(1-r) with
        # r = t_S / t_{S-1}.
        with np.errstate(over="ignore"):
            ratio = np.exp(np.minimum(last - prev, 0.0))
        tail_ok = np.zeros_like(ratio, dtype=bool)
        safe = ratio < 1.0
        with np.errstate(divide="ignore"):
            tail_ok[safe] = (
                last[safe] + np.log(ratio[safe]) - np.log1p(-ratio[safe]) < log_rel
            )
        done = decreasing & small & tail_ok & (s[-1] > mode)
        if done.all():
            return s, log_terms, log_z
        if n_terms >= policy.max_terms:
            raise TruncationError(
                f"series not converged after {n_terms} terms "
                f"(lambda_max={lam.max():g}, nu={nu:g}, rel_tol={policy.rel_tol:g})"
            )
        n_terms = min(2 * n_terms, policy.max_terms)


def pmf_table(lam, nu: float, policy: SeriesPolicy = DEFAULT_POLICY):
    """Support points and normalized pmf rows for an array of lambdas."""
    s, log_terms, log_z = log_term_table(lam, nu, policy)
    return s, np.exp(log_terms - log_z[:, None])


def log_normalizer(p: ComParams, policy: SeriesPolicy = DEFAULT_POLICY) -> float:
    """log Z(lambda, nu), with closed forms at nu=0 (geometric) and nu=1."""
    if p.nu == 0:
        return float(-np.log1p(-p.lam))
    if p.nu == 1:
        return p.lam
    _, _, log_z = log_term_table(p.lam, p.nu, policy)
    return float(log_z[0])


def log_pmf(y: int, p: ComParams, policy: SeriesPolicy = DEFAULT_POLICY) -> float:
    if y < 0 or y != int(y):
        raise ValueError(f"y must be a nonnegative integer, got {y}")
    return float(
        y * np.log(p.lam) - p.nu * gammaln(y + 1.0) - log_normalizer(p, policy)
    )


def consecutive_ratio(y: int, p: ComParams) -> float:
    """P(Y=y-1)/P(Y=y) = y^nu / lambda."""
    if y < 1 or y != int(y):
        raise ValueError(f"y must be a positive integer, got {y}")
    return float(y**p.nu / p.lam)


def expect_fn(
    p: ComParams,
    f: Callable[[np.ndarray], np.ndarray],
    policy: SeriesPolicy = DEFAULT_POLICY,
) -> float:
    """E[f(Y)] = sum_y f(y) pmf(y) over the truncated support."""
    s, pmf = pmf_table(p.lam, p.nu, policy)
    vals = np.asarray(f(s), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("f must be finite on the truncated support")
    return float(pmf[0] @ vals)


def mean_exact(p: ComParams, policy: SeriesPolicy = DEFAULT_POLICY) -> float:
    s, pmf = pmf_table(p.lam, p.nu, policy)
    return float(pmf[0] @ s)


def var_exact(p: ComParams, policy: SeriesPolicy = DEFAULT_POLICY) -> float:
    s, pmf = pmf_table(p.lam, p.nu, policy)
    m = pmf[0] @ s
    return float(pmf[0] @ s**2 - m**2)


def mean_approx(p: ComParams) -> float:
    """lambda^(1/nu) - (nu-1)/(2 nu); accurate for nu <= 1 or lambda > 10^nu."""
    if p.nu == 0:
        raise ValueError("mean_approx is undefined at nu=0; use mean_exact")
    return float(p.lam ** (1.0 / p.nu) - (p.nu - 1.0) / (2.0 * p.nu))


def approx_mean_valid(lam: float, nu: float) -> bool:
    """Validity region of the mean approximation: nu <= 1 or lambda > 10^nu."""
    return nu <= 1.0 or lam > 10.0**nu


def cdf(y: int, p: ComParams, policy: SeriesPolicy = DEFAULT_POLICY) -> float:
    if y < 0 or y != int(y):
        raise ValueError(f"y must be a nonnegative integer, got {y}")
    s, pmf = pmf_table(p.lam, p.nu, policy)
    return float(min(1.0, pmf[0][: int(y) + 1].sum()))


def quantile(q: float, p: ComParams, policy: SeriesPolicy = DEFAULT_POLICY) -> int:
    """Smallest y with CDF(y) >= q (left-continuous inverse)."""
    if not (0 < q < 1):
        raise ValueError(f"q must lie in (0, 1), got {q}")
    s, pmf = pmf_table(p.lam, p.nu, policy)
    cum = np.cumsum(pmf[0])
    idx = int(np.searchsorted(cum, q, side="left"))
    return min(idx, len(s) - 1)


def sample(
    p: ComParams,
    rng: np.random.Generator,
    size: int | None = None,
    policy: SeriesPolicy = DEFAULT_POLICY,
):
    """Inverse-CDF sampling driven by an explicit random source."""
    s, pmf = pmf_table(p.lam, p.nu, policy)
    cum = np.cumsum(pmf[0])
    u = rng.uniform(size=size)
    draws = np.searchsorted(cum, u, side="left")
    draws = np.minimum(draws, len(s) - 1)
    if size is None:
        return int(draws)
    return draws.astype(np.int64)


def sample_many(
    lam,
    nu: float,
    rng: np.random.Generator,
    policy: SeriesPolicy = DEFAULT_POLICY,
) -> np.ndarray:
    """One draw per entry of lam (shared nu); used for regression resampling."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    s, pmf = pmf_table(lam, nu, policy)
    cum = np.cumsum(pmf, axis=1)
    u = rng.uniform(size=len(lam))
    # searchsorted row by row; supports differ only through the shared grid
    draws = np.array(
        [np.searchsorted(cum[i], u[i], side="left") for i in range(len(lam))]
    )
    return np.minimum(draws, len(s) - 1).astype(np.int64)
