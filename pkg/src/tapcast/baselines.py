"""Comparison forecasters: persistent, grid-searched ARIMA, discrete Hawkes."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter
from scipy.special import gammaln

from .core import DailySeries, InsufficientHistoryError

log = logging.getLogger(__name__)

WEEK = 7


def _values(x) -> np.ndarray:
    if isinstance(x, DailySeries):
        return x.values
    return np.asarray(x, dtype=np.float64)


def persistent_forecast(history, horizon: int = WEEK) -> np.ndarray:
    """Repeat the last ``horizon`` observed days verbatim."""
    y = _values(history)
    if len(y) < horizon:
        raise InsufficientHistoryError(f"persistent forecast needs {horizon} days of history, got {len(y)}")
    return np.array(y[-horizon:], dtype=np.float64)


# -- ARIMA -----------------------------------------------------------------------

ARIMA_GRID = tuple(itertools.product(range(8), range(3), range(3)))


@dataclass
class ArimaModel:
    order: tuple[int, int, int]
    intercept: float = 0.0
    ar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma2: float = 0.0

    def __post_init__(self):
        p, d, q = self.order
        if not (0 <= p <= 7 and 0 <= d <= 2 and 0 <= q <= 2):
            raise ValueError(f"order {self.order} outside the grid")
        self.ar = np.asarray(self.ar, dtype=np.float64).reshape(p)
        self.ma = np.asarray(self.ma, dtype=np.float64).reshape(q)


def css_residuals(w: np.ndarray, c: float, ar: np.ndarray, ma: np.ndarray) -> np.ndarray:
    """Conditional residuals of the differenced series, from index ``p`` on.

    ``e_t = w_t - c - sum(ar_i w_{t-i}) - sum(ma_j e_{t-j})`` with pre-sample
    residuals set to 0.
    """
    p = len(ar)
    v = w[p:] - c
    for i in range(1, p + 1):
        v = v - ar[i - 1] * w[p - i : len(w) - i]
    if len(ma):
        return lfilter([1.0], np.concatenate([[1.0], ma]), v)
    return v


def _unpack(theta, p, mean):
    """Split ``theta`` into ``(c, ar, ma)``; without a mean term ``c`` is 0."""
    if mean:
        return theta[0], theta[1 : 1 + p], theta[1 + p :]
    return 0.0, theta[:p], theta[p:]


def _css(theta, w, p, q, mean):
    e = css_residuals(w, *_unpack(theta, p, mean))
    val = float(e @ e)
    return val if math.isfinite(val) else 1e300


def _stationary(ar: np.ndarray) -> bool:
    if len(ar) == 0:
        return True
    roots = np.roots(np.concatenate([-ar[::-1], [1.0]]))
    return bool(np.all(np.abs(roots) > 1.0))


def _ols_ar(w: np.ndarray, p: int, mean: bool = True) -> np.ndarray:
    """OLS ``([c,] ar_1..ar_p)`` start values."""
    if p == 0:
        return np.array([w.mean()]) if mean else np.zeros(0)
    lags = [w[p - i : len(w) - i] for i in range(1, p + 1)]
    X = np.column_stack(([np.ones(len(w) - p)] if mean else []) + lags)
    coef, *_ = np.linalg.lstsq(X, w[p:], rcond=None)
    return coef


def arima_estimate(y, order: tuple[int, int, int]) -> ArimaModel:
    """CSS estimate of one ARIMA order via Nelder-Mead.

    An intercept is estimated only for ``d == 0``; differenced models carry
    no drift, so ``(0, 1, 0)`` is the pure random walk. Raises ``ValueError`` for too-short series, non-finite parameters or a
    non-stationary AR part.
    """
    p, d, q = order
    y = _values(y)
    if len(y) <= p + d + q + 1:
        raise ValueError(f"series too short for order {order}")
    w = np.diff(y, n=d) if d else y.copy()
    mean = d == 0
    x0 = np.concatenate([_ols_ar(w, p, mean), np.zeros(q)])
    if p + q == 0:
        theta = x0
    else:
        res = minimize(
            _css,
            x0,
            args=(w, p, q, mean),
            method="Nelder-Mead",
            options={"maxiter": 400 * (p + q + 1), "xatol": 1e-6, "fatol": 1e-8},
        )
        theta = res.x
    if not np.all(np.isfinite(theta)):
        raise ValueError(f"non-finite parameters for order {order}")
    c, ar, ma = _unpack(theta, p, mean)
    if not _stationary(ar):
        raise ValueError(f"explosive AR roots for order {order}")
    e = css_residuals(w, c, ar, ma)
    sigma2 = float(e @ e / max(len(e), 1))
    return ArimaModel(order, float(c), ar, ma, sigma2)


def arima_forecast(model: ArimaModel, history, horizon: int = WEEK) -> np.ndarray:
    """Recursive forecast with zero future innovations, undifferenced, clamped at 0."""
    p, d, q = model.order
    y = _values(history)
    if len(y) < p + d:
        raise InsufficientHistoryError(f"ARIMA{model.order} needs {p + d} days of history")
    w = np.diff(y, n=d) if d else y.copy()
    if len(w) > p:
        e = css_residuals(w, model.intercept, model.ar, model.ma)
    else:
        e = np.zeros(0)
    w_ext = list(w)
    e_ext = list(e)
    for _ in range(horizon):
        val = model.intercept
        for i in range(1, p + 1):
            val += model.ar[i - 1] * w_ext[-i]
        for j in range(1, q + 1):
            if len(e_ext) >= j:
                val += model.ma[j - 1] * e_ext[-j]
        w_ext.append(val)
        e_ext.append(0.0)
    fc = np.array(w_ext[len(w) :])
    # undo differencing from the innermost level outwards
    for level in range(d, 0, -1):
        anchor = np.diff(y, n=level - 1)[-1] if level > 1 else y[-1]
        fc = anchor + np.cumsum(fc)
    return np.maximum(fc, 0.0)


@dataclass
class ArimaSearch:
    """Outcome of the validation grid search."""

    model: ArimaModel | None
    scores: dict[tuple[int, int, int], float]
    fits: dict[tuple[int, int, int], ArimaModel]
    discarded: dict[tuple[int, int, int], str]
    fallback: bool = False

    def forecast(self, history, horizon: int = WEEK) -> np.ndarray:
        if self.model is None:
            return persistent_forecast(history, horizon)
        return arima_forecast(self.model, history, horizon)


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def arima_fit(train, validation_week, grid=ARIMA_GRID) -> ArimaSearch:
    """Fit every order on ``train`` and keep the best on ``validation_week``.

    Ties keep the earlier grid order. If every order is discarded the search
    falls back to the persistent forecast and sets ``fallback``.
    """
    y = _values(train)
    actual = _values(validation_week)
    scores, fits, discarded = {}, {}, {}
    for order in grid:
        try:
            model = arima_estimate(y, order)
            fc = arima_forecast(model, y, len(actual))
        except (ValueError, np.linalg.LinAlgError) as exc:
            discarded[order] = str(exc)
            continue
        if not np.all(np.isfinite(fc)):
            discarded[order] = "non-finite forecast"
            continue
        fits[order] = model
        scores[order] = _rmse(fc, actual)
    if not scores:
        log.warning("all ARIMA orders discarded; falling back to persistent")
        return ArimaSearch(None, scores, fits, discarded, fallback=True)
    best = min(scores, key=lambda o: (scores[o], grid.index(o)))
    return ArimaSearch(fits[best], scores, fits, discarded)


# -- discrete-day Hawkes ---------------------------------------------------------------


@dataclass
class HawkesModel:
    mu: float
    alpha: float
    beta: float

    @property
    def branching_ratio(self) -> float:
        k = math.exp(-self.beta)
        return self.alpha * k / (1.0 - k)

    def kernel(self, lags: np.ndarray) -> np.ndarray:
        return self.alpha * np.exp(-self.beta * lags)


def excitation(counts: np.ndarray, beta: float) -> np.ndarray:
    """``S_t = sum_{k>=1} N_{t-k} exp(-beta k)`` for every day ``t``."""
    k = math.exp(-beta)
    return lfilter([0.0, k], [1.0, -k], counts)


def hawkes_loglik(model: HawkesModel, counts) -> float:
    """Poisson log-likelihood of daily counts under the discrete intensity."""
    N = _values(counts)
    lam = model.mu + model.alpha * excitation(N, model.beta)
    lam = np.maximum(lam, 1e-300)
    return float(np.sum(N * np.log(lam) - lam - gammaln(N + 1.0)))


def _neg_loglik(log_theta, N):
    mu, alpha, beta = np.exp(log_theta)
    if not (math.isfinite(mu) and math.isfinite(alpha) and beta > 0):
        return 1e300
    val = -hawkes_loglik(HawkesModel(mu, alpha, beta), N)
    return val if math.isfinite(val) else 1e300


def _project_stable(model: HawkesModel, cap: float = 0.99) -> HawkesModel:
    if model.branching_ratio < 1.0:
        return model
    k = math.exp(-model.beta)
    return HawkesModel(model.mu, cap * (1.0 - k) / k, model.beta)


def hawkes_fit(train) -> HawkesModel:
    """Maximum-likelihood fit by Nelder-Mead over log ``(mu, alpha, beta)``."""
    N = _values(train)
    if len(N) < 14:
        raise InsufficientHistoryError(f"Hawkes fit needs 14 days, got {len(N)}")
    if not np.any(N > 0):
        return HawkesModel(0.0, 0.0, 1.0)
    x0 = np.log([max(N.mean() * 0.5, 1e-6), 0.5, 1.0])
    start = _neg_loglik(x0, N)
    res = minimize(_neg_loglik, x0, args=(N,), method="Nelder-Mead", options={"maxiter": 2000, "xatol": 1e-7, "fatol": 1e-9})
    x = res.x if res.fun <= start else x0
    model = _project_stable(HawkesModel(*map(float, np.exp(x))))
    return model


def hawkes_forecast(model: HawkesModel, history, horizon: int = WEEK) -> np.ndarray:
    """Expected counts, feeding earlier expectations back for within-week days."""
    M = list(_values(history))
    n_hist = len(M)
    for _ in range(horizon):
        past = np.array(M[::-1])
        lags = np.arange(1, len(past) + 1)
        M.append(model.mu + float(model.kernel(lags) @ past) if len(past) else model.mu)
    return np.maximum(np.array(M[n_hist:]), 0.0)


def simulate_hawkes(model: HawkesModel, n_days: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = np.zeros(n_days)
    k = math.exp(-model.beta)
    s = 0.0
    for t in range(n_days):
        out[t] = rng.poisson(model.mu + model.alpha * s)
        s = k * (s + out[t])
    return out
