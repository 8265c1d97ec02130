"""Stationarity and causality tests on daily series.

Everything here is plain numpy: OLS through a QR factorisation, the F
distribution's upper tail through a continued-fraction regularized incomplete
beta function, a constant-only augmented Dickey-Fuller test and the nested
model Granger F-test.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SingularDesignError, ValidationError

logger = logging.getLogger(__name__)

# large-sample Dickey-Fuller critical values, constant and no trend
ADF_CRITICAL = {"1%": -3.43, "5%": -2.86, "10%": -2.57}

_BETA_EPS = 1e-16
_BETA_TINY = 1e-300
_BETA_MAXIT = 10000


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_TINY:
        d = _BETA_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_TINY:
            d = _BETA_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETA_TINY:
            c = _BETA_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_TINY:
            d = _BETA_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETA_TINY:
            c = _BETA_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValidationError("beta parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"x={x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_upper_tail(x: float, d1: int, d2: int) -> float:
    """P(F > x) for an F(d1, d2) variate."""
    if d1 < 1 or d2 < 1:
        raise ValidationError(f"invalid degrees of freedom ({d1}, {d2})")
    if math.isnan(x):
        raise ValidationError("F statistic is NaN")
    if x <= 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    return betainc_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))


def roc(close) -> np.ndarray:
    """Percent day-over-day change, one element shorter than ``close``."""
    close = np.asarray(close, dtype=float)
    if close.size < 2:
        raise ValidationError("need at least two closes")
    if np.any(close <= 0):
        raise ValidationError("closing prices must be positive")
    return 100.0 * (close[1:] - close[:-1]) / close[:-1]


@dataclass(frozen=True)
class OlsFit:
    coef: np.ndarray
    rss: float
    residuals: np.ndarray
    n: int
    k: int
    xtx_inv: np.ndarray

    @property
    def sigma2(self) -> float:
        return self.rss / (self.n - self.k)

    def stderr(self) -> np.ndarray:
        return np.sqrt(self.sigma2 * np.diag(self.xtx_inv))


def ols(y, X, names: Sequence[str] | None = None, rtol: float = 1e-10) -> OlsFit:
    """Least squares by Householder QR.

    A column whose R diagonal is below ``rtol`` times the largest one is
    linearly dependent on the columns before it and raises
    :class:`SingularDesignError` naming it.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    if y.shape != (n,):
        raise ValidationError("y and X have incompatible shapes")
    if n <= k:
        raise ValidationError(f"need more observations ({n}) than regressors ({k})")
    Q, R = np.linalg.qr(X, mode="reduced")
    diag = np.abs(np.diag(R))
    scale = max(diag.max(), np.linalg.norm(X, axis=0).max())
    bad = np.flatnonzero(diag <= rtol * scale)
    if bad.size:
        j = int(bad[0])
        label = names[j] if names is not None else f"column {j}"
        raise SingularDesignError(f"singular design: {label} is linearly dependent", column=j)
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ coef
    R_inv = np.linalg.solve(R, np.eye(k))
    return OlsFit(coef, float(resid @ resid), resid, n, k, R_inv @ R_inv.T)


def lag_matrix(x: np.ndarray, lags: int, start: int) -> np.ndarray:
    """Columns ``x[t-1], ..., x[t-lags]`` for ``t = start .. len(x)-1``."""
    n = len(x)
    return np.column_stack([x[start - i : n - i] for i in range(1, lags + 1)])


@dataclass(frozen=True)
class GrangerResult:
    cause: str
    effect: str
    lag: int
    F: float
    p_value: float
    n_effective: int
    rss_restricted: float
    rss_unrestricted: float

    @property
    def direction(self) -> tuple[str, str]:
        return (self.cause, self.effect)


def granger_test(effect, cause, lag: int, cause_name: str = "x", effect_name: str = "y") -> GrangerResult:
    """Does ``cause`` Granger-cause ``effect`` at lag order ``lag``?

    Restricted: effect on a constant and its own ``lag`` lags. Unrestricted:
    additionally ``lag`` lags of ``cause``. The first ``lag`` observations are
    dropped, leaving ``n - lag`` equations.
    """
    y = np.asarray(effect, dtype=float)
    x = np.asarray(cause, dtype=float)
    if y.shape != x.shape or y.ndim != 1:
        raise ValidationError("effect and cause must be 1-D series of equal length")
    if lag < 1:
        raise ValidationError("lag must be at least 1")
    n_eff = len(y) - lag
    dof = n_eff - (2 * lag + 1)
    if dof <= 0:
        raise ValidationError(f"series of length {len(y)} too short for lag {lag}")
    target = y[lag:]
    const = np.ones((n_eff, 1))
    own = lag_matrix(y, lag, lag)
    other = lag_matrix(x, lag, lag)
    names_r = ["const"] + [f"{effect_name}_lag{i}" for i in range(1, lag + 1)]
    names_u = names_r + [f"{cause_name}_lag{i}" for i in range(1, lag + 1)]
    restricted = ols(target, np.hstack([const, own]), names_r)
    rss_r = restricted.rss
    X_u = np.hstack([const, own, other])
    try:
        rss_u = ols(target, X_u, names_u).rss
    except SingularDesignError as exc:
        # cause lags duplicate the effect's own lags: the nested fit adds nothing
        logger.warning("granger %s->%s lag %d: %s; using minimum-norm fit", cause_name, effect_name, lag, exc)
        coef = np.linalg.lstsq(X_u, target, rcond=None)[0]
        resid = target - X_u @ coef
        rss_u = min(float(resid @ resid), rss_r)
    if rss_u <= 0:
        F = math.inf if rss_r > rss_u else 0.0
    else:
        F = max(0.0, ((rss_r - rss_u) / lag) / (rss_u / dof))
    return GrangerResult(
        cause=cause_name,
        effect=effect_name,
        lag=lag,
        F=F,
        p_value=f_upper_tail(F, lag, dof),
        n_effective=n_eff,
        rss_restricted=rss_r,
        rss_unrestricted=rss_u,
    )


def stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


@dataclass(frozen=True)
class AdfResult:
    t_statistic: float
    lag_used: int
    n_obs: int
    reject: dict

    @property
    def stars(self) -> str:
        return "***" if self.reject["1%"] else "**" if self.reject["5%"] else "*" if self.reject["10%"] else ""


def schwert_lag(n: int) -> int:
    return int(math.floor(12.0 * (n / 100.0) ** 0.25))


def adf_test(series, max_lag: int | None = None) -> AdfResult:
    """Augmented Dickey-Fuller test with a constant and no trend.

    Regresses ``dy_t`` on ``1, y_{t-1}, dy_{t-1} .. dy_{t-p}`` and returns the
    t-statistic of the ``y_{t-1}`` coefficient. ``p`` defaults to the Schwert
    rule ``floor(12 * (n/100)**0.25)``.
    """
    y = np.asarray(series, dtype=float)
    n = y.size
    p = schwert_lag(n) if max_lag is None else int(max_lag)
    if p < 0:
        raise ValidationError("lag must be non-negative")
    if n < p + 10:
        raise ValidationError(f"series of length {n} too short for ADF with {p} lags")
    dy = np.diff(y)
    target = dy[p:]
    cols = [np.ones(target.size), y[p:-1]]
    if p:
        cols.extend(dy[p - i : dy.size - i] for i in range(1, p + 1))
    X = np.column_stack(cols)
    fit = ols(target, X)
    t = float(fit.coef[1] / fit.stderr()[1])
    reject = {level: t < crit for level, crit in ADF_CRITICAL.items()}
    return AdfResult(t, p, target.size, reject)


def inner_join(dates_a, values_a, dates_b, values_b):
    """Align two dated series on their common dates, keeping date order."""
    pos_b = {d: i for i, d in enumerate(dates_b)}
    keep = [(d, i, pos_b[d]) for i, d in enumerate(dates_a) if d in pos_b]
    dates = [d for d, _, _ in keep]
    a = np.asarray(values_a, dtype=float)[[i for _, i, _ in keep]]
    b = np.asarray(values_b, dtype=float)[[j for _, _, j in keep]]
    return dates, a, b


def granger_table(stock: str, roc_dates, roc_values, indices: dict, lags=(1, 2, 3)) -> list[dict]:
    """Both causal directions between ROC and every named index, per lag.

    ``indices`` maps a variable name to ``(dates, values)``. Each direction is
    fitted separately.
    """
    rows = []
    for name, (dates, values) in indices.items():
        _, r, s = inner_join(roc_dates, roc_values, dates, values)
        for lag in lags:
            fwd = granger_test(r, s, lag, cause_name=name, effect_name="ROC")
            rows.append(_gct_row(stock, name, f"{name}->ROC", fwd))
        for lag in lags:
            back = granger_test(s, r, lag, cause_name="ROC", effect_name=name)
            rows.append(_gct_row(stock, name, f"ROC->{name}", back))
    return rows


def _gct_row(stock, name, direction, res: GrangerResult) -> dict:
    return {
        "stock": stock,
        "variable": name,
        "direction": direction,
        "lag": res.lag,
        "F": res.F,
        "p": res.p_value,
        "stars": stars(res.p_value),
    }
