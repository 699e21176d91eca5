"""Comparison regressions and model-comparison statistics.

Poisson and logistic GLMs are fit by Newton iterations on their
canonical links; negative binomial by joint quasi-Newton over
(beta, log r); restricted generalized Poisson (RGPR) by constrained
quasi-Newton over (beta, alpha) subject to 1 + alpha*mu_i > 0 and
1 + alpha*y_i > 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
from scipy.special import digamma, expit, gammaln

from .data import Dataset, linear_predictor

NEGBIN_BOUNDARY_R = 1e6
NEGBIN_LIMIT_R = 1e8


class BaselineError(RuntimeError):
    """A baseline fit failed in a way that leaves no usable result."""


class SeparationError(BaselineError):
    """Complete separation in logistic regression."""


class NonConvergenceError(BaselineError):
    """The optimizer did not converge; diagnostics attached."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class BaselineFit:
    model_kind: str          # poisson | negbin | logistic | rgpr
    beta: np.ndarray
    cov: np.ndarray
    loglik: float
    converged: bool
    extra: float | None = None       # r for negbin, alpha for rgpr
    extra_se: float | None = None
    boundary: bool = False
    n_obs: int = 0

    @property
    def n_params(self) -> int:
        return len(self.beta) + (0 if self.extra is None else 1)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


def _newton_glm(ds: Dataset, mean_fn, var_fn, loglik_fn, beta0=None,
                max_iter=100, tol=1e-10):
    """Canonical-link Newton iterations shared by Poisson and logistic."""
    X = ds.X
    y = ds.y.astype(float)
    beta = np.zeros(ds.n_cols) if beta0 is None else beta0.copy()
    for it in range(max_iter):
        eta = X @ beta
        mu = mean_fn(eta)
        w = var_fn(mu)
        g = X.T @ (y - mu)
        H = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise BaselineError(f"singular Newton system at iteration {it}") from exc
        beta = beta + step
        if np.max(np.abs(g)) < tol and np.max(np.abs(step)) < 1e-8:
            break
    else:
        raise NonConvergenceError("Newton iterations did not converge")
    eta = X @ beta
    mu = mean_fn(eta)
    H = X.T @ (X * var_fn(mu)[:, None])
    cov = np.linalg.inv(H)
    return beta, cov, loglik_fn(y, eta, mu), it + 1


def poisson_loglik(y: np.ndarray, eta: np.ndarray) -> float:
    return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1.0)))


def fit_poisson(ds: Dataset) -> BaselineFit:
    """Poisson GLM with log link."""
    beta0 = np.zeros(ds.n_cols)
    beta0[0] = np.log(max(ds.y.mean(), 0.1))
    beta, cov, ll, _ = _newton_glm(
        ds,
        mean_fn=np.exp,
        var_fn=lambda mu: mu,
        loglik_fn=lambda y, eta, mu: poisson_loglik(y, eta),
        beta0=beta0,
    )
    return BaselineFit("poisson", beta, cov, ll, True, n_obs=ds.n_obs)


def fit_logistic(ds: Dataset) -> BaselineFit:
    """Logistic regression; response must be 0/1."""
    y = ds.y
    if not np.all((y == 0) | (y == 1)):
        raise BaselineError("logistic regression requires a 0/1 response")

    def loglik_fn(y, eta, mu):
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    try:
        beta, cov, ll, _ = _newton_glm(
            ds,
            mean_fn=expit,
            var_fn=lambda mu: mu * (1.0 - mu),
            loglik_fn=loglik_fn,
        )
    except BaselineError as exc:
        raise SeparationError(
            "logistic fit failed; data may be completely separated"
        ) from exc
    if np.max(np.abs(linear_predictor(ds, beta))) > 30:
        raise SeparationError("complete separation: fitted probabilities at 0/1")
    return BaselineFit("logistic", beta, cov, ll, True, n_obs=ds.n_obs)


def negbin_loglik(y: np.ndarray, mu: np.ndarray, r: float) -> float:
    return float(
        np.sum(
            gammaln(r + y) - gammaln(r) - gammaln(y + 1.0)
            + r * (np.log(r) - np.log(r + mu))
            + y * (np.log(mu) - np.log(r + mu))
        )
    )


def fit_negbin(ds: Dataset, r0: float = 10.0) -> BaselineFit:
    """Negative binomial (gamma-Poisson mixture) MLE over (beta, log r).

    As r -> infinity the model collapses onto Poisson; on equi- or
    under-dispersed data the optimizer drifts to that boundary, which is
    detected and reported as a boundary-flagged Poisson-equivalent fit.
    """
    pois = fit_poisson(ds)
    p1 = ds.n_cols
    y = ds.y.astype(float)

    def neg(z):
        beta, r = z[:p1], float(np.exp(z[p1]))
        mu = np.exp(ds.X @ beta)
        ll = negbin_loglik(y, mu, r)
        if not np.isfinite(ll):
            return np.inf, np.zeros_like(z)
        g_beta = ds.X.T @ (r * (y - mu) / (r + mu))
        g_r = np.sum(
            digamma(r + y) - digamma(r) + np.log(r) - np.log(r + mu)
            + 1.0 - (r + y) / (r + mu)
        )
        return -ll, -np.concatenate([g_beta, [g_r * r]])

    z0 = np.concatenate([pois.beta, [np.log(r0)]])
    res = scipy.optimize.minimize(
        neg, z0, jac=True, method="BFGS", options={"gtol": 1e-8, "maxiter": 500}
    )
    r_hat = float(np.exp(res.x[p1]))

    if r_hat > NEGBIN_BOUNDARY_R:
        # Poisson limit: report the Poisson solution, flagged.
        mu = np.exp(ds.X @ pois.beta)
        cov = np.full((p1 + 1, p1 + 1), np.nan)
        cov[:p1, :p1] = pois.cov
        return BaselineFit(
            "negbin",
            pois.beta.copy(),
            cov,
            negbin_loglik(y, mu, NEGBIN_LIMIT_R),
            converged=True,
            extra=NEGBIN_LIMIT_R,
            boundary=True,
            n_obs=ds.n_obs,
        )

    grad_norm = float(np.max(np.abs(res.jac)))
    # absolute gtol is unreachable when the loglik is thousands in
    # magnitude; accept a gradient small relative to that scale
    if not (res.success or grad_norm < 1e-6 * max(1.0, abs(res.fun))):
        raise NonConvergenceError(
            f"negative binomial fit did not converge (|grad|={grad_norm:.3g})"
        )
    beta_hat = res.x[:p1]
    hess = _numerical_hessian(lambda z: -neg(z)[0], res.x)
    cov_z = np.linalg.inv(-hess)
    # delta method log r -> r
    J = np.eye(p1 + 1)
    J[p1, p1] = r_hat
    cov = J @ cov_z @ J.T
    return BaselineFit(
        "negbin",
        beta_hat,
        cov,
        -float(res.fun),
        converged=True,
        extra=r_hat,
        extra_se=float(np.sqrt(cov[p1, p1])),
        n_obs=ds.n_obs,
    )


def rgpr_loglik(y: np.ndarray, mu: np.ndarray, alpha: float) -> float:
    """Restricted generalized Poisson log-likelihood.

    Only defined where 1 + alpha*mu_i > 0 and 1 + alpha*y_i > 0; -inf is
    returned outside so ascent steps into infeasible territory are
    rejected by the line search.
    """
    if np.any(1.0 + alpha * mu <= 1e-12) or np.any(1.0 + alpha * y <= 1e-12):
        return -np.inf
    return float(
        np.sum(
            y * (np.log(mu) - np.log1p(alpha * mu))
            + (y - 1.0) * np.log1p(alpha * y)
            - gammaln(y + 1.0)
            - mu * (1.0 + alpha * y) / (1.0 + alpha * mu)
        )
    )


def _rgpr_mass_deficiency(mu: np.ndarray, alpha: float, tol: float = 1e-3):
    """Max |1 - total pmf mass| over observations.

    For alpha < 0 the support is truncated at y < -1/alpha and the pmf
    need not sum to one, which is the known RGPR failure mode on
    under-dispersed data.
    """
    worst = 0.0
    for m in (float(mu.min()), float(mu.max())):
        ys = np.arange(0.0, 10 * m + 200.0)
        if alpha < 0:
            ys = ys[1.0 + alpha * ys > 1e-12]
        lp = (
            ys * (np.log(m) - np.log1p(alpha * m))
            + (ys - 1.0) * np.log1p(alpha * ys)
            - gammaln(ys + 1.0)
            - m * (1.0 + alpha * ys) / (1.0 + alpha * m)
        )
        worst = max(worst, abs(1.0 - float(np.exp(lp).sum())))
    return worst


def fit_rgpr(ds: Dataset, max_iter: int = 500) -> BaselineFit:
    """Restricted generalized Poisson MLE over (beta, alpha).

    Raises NonConvergenceError when the likelihood runs into the
    feasibility boundary 1 + alpha*y_max = 0 (where it is unbounded and
    the truncated pmf no longer sums to one) or the optimizer fails.
    """
    pois = fit_poisson(ds)
    p1 = ds.n_cols
    y = ds.y.astype(float)
    y_max = float(y.max())

    def neg(z):
        beta, alpha = z[:p1], float(z[p1])
        mu = np.exp(ds.X @ beta)
        ll = rgpr_loglik(y, mu, alpha)
        if not np.isfinite(ll):
            return np.inf, np.zeros_like(z)
        one_am = 1.0 + alpha * mu
        one_ay = 1.0 + alpha * y
        dl_dmu = y / mu - y * alpha / one_am - one_ay / one_am**2
        g_beta = ds.X.T @ (dl_dmu * mu)
        g_alpha = np.sum(
            -y * mu / one_am + y * (y - 1.0) / one_ay - mu * (y - mu) / one_am**2
        )
        return -ll, -np.concatenate([g_beta, [g_alpha]])

    z0 = np.concatenate([pois.beta, [0.0]])
    res = scipy.optimize.minimize(
        neg, z0, jac=True, method="BFGS", options={"gtol": 1e-8, "maxiter": max_iter}
    )
    beta_hat, alpha_hat = res.x[:p1], float(res.x[p1])
    mu_hat = np.exp(ds.X @ beta_hat)

    diagnostics = {
        "alpha": alpha_hat,
        "alpha_feasibility_bound": -1.0 / y_max,
        "min_1_plus_alpha_y": float(1.0 + alpha_hat * y_max),
        "min_1_plus_alpha_mu": float(np.min(1.0 + alpha_hat * mu_hat)),
        "optimizer_message": str(res.message),
    }
    if alpha_hat < 0:
        # Near the boundary -1/y_max the likelihood is unbounded and the
        # truncated pmf mass departs from one: no valid MLE.
        deficiency = _rgpr_mass_deficiency(mu_hat, alpha_hat)
        diagnostics["pmf_mass_deficiency"] = deficiency
        if 1.0 + alpha_hat * y_max < 0.05 or deficiency > 1e-3:
            raise NonConvergenceError(
                "RGPR did not converge: alpha driven to the feasibility "
                "boundary 1 + alpha*y > 0 (under-dispersed data)",
                diagnostics,
            )
    grad_norm = float(np.max(np.abs(res.jac)))
    if not (res.success or grad_norm < 1e-6 * max(1.0, abs(res.fun))):
        raise NonConvergenceError(
            f"RGPR optimizer did not converge (|grad|={grad_norm:.3g})", diagnostics
        )

    hess = _numerical_hessian(lambda z: -neg(z)[0], res.x)
    try:
        cov = np.linalg.inv(-hess)
    except np.linalg.LinAlgError as exc:
        raise NonConvergenceError("RGPR observed information singular", diagnostics) from exc
    return BaselineFit(
        "rgpr",
        beta_hat,
        cov,
        -float(res.fun),
        converged=True,
        extra=alpha_hat,
        extra_se=float(np.sqrt(cov[p1, p1])),
        n_obs=ds.n_obs,
    )


def _numerical_hessian(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Hessian of a scalar function."""
    n = len(x)
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h
            ej[j] = h
            fpp = f(x + ei + ej)
            fpm = f(x + ei - ej)
            fmp = f(x - ei + ej)
            fmm = f(x - ei - ej)
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * h * h)
    return H


@dataclass
class ComparisonRow:
    model: str
    status: str              # "ok" or "failed: <reason>"
    loglik: float | None = None
    k: int | None = None
    aic: float | None = None
    aicc: float | None = None
    mse: float | None = None
    note: str | None = None


@dataclass
class ModelComparison:
    rows: list[ComparisonRow] = field(default_factory=list)

    def row(self, model: str) -> ComparisonRow:
        for r in self.rows:
            if r.model == model:
                return r
        raise KeyError(model)


def information_criteria(loglik: float, k: int, n: int):
    """(AIC, AICc); AICc = AIC + 2k(k+1)/(n-k-1), +inf at n = k+1."""
    aic = -2.0 * loglik + 2.0 * k
    if n - k - 1 <= 0:
        return aic, np.inf
    return aic, aic + 2.0 * k * (k + 1.0) / (n - k - 1.0)


def compare_models(ds: Dataset, fits: dict, fitted: dict) -> ModelComparison:
    """Assemble per-model loglik/AIC/AICc/MSE rows.

    fits maps model name -> fit object (BaselineFit or FitResult) or an
    exception recorded for a failed model; fitted maps model name -> the
    fitted-value vector used for MSE.
    """
    y = ds.y.astype(float)
    comp = ModelComparison()
    for name, f in fits.items():
        if isinstance(f, Exception):
            comp.rows.append(ComparisonRow(model=name, status=f"failed: {f}"))
            continue
        k = f.n_params
        aic, aicc = information_criteria(f.loglik, k, ds.n_obs)
        yhat = fitted.get(name)
        mse = None if yhat is None else float(np.mean((y - np.asarray(yhat)) ** 2))
        note = "AICc infinite: n = k+1" if np.isinf(aicc) else None
        comp.rows.append(
            ComparisonRow(
                model=name, status="ok", loglik=f.loglik, k=k,
                aic=aic, aicc=aicc, mse=mse, note=note,
            )
        )
    return comp
