"""Exponent fits of count series and comparison with closed-form predictions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .experiment import CountSeries

__all__ = [
    "FitError",
    "FitResult",
    "PredictionComparison",
    "poly_exponent",
    "fit_exponent",
    "compare_to_prediction",
    "MIN_FIT_POINTS",
]

MIN_FIT_POINTS = 4


class FitError(ValueError):
    pass


def poly_exponent(kind: str, d: int) -> float:
    """Power of T dividing exp(delta T): (d+1)/2 for classes, (d-1)/2 for elements."""
    if kind in ("jordan", "theta"):
        return (d + 1) / 2
    if kind == "cartan":
        return (d - 1) / 2
    raise ValueError(f"unknown kind {kind!r}")


@dataclass
class FitResult:
    kind: str
    delta_hat: float
    poly_exponent_used: float
    intercept: float
    T: np.ndarray
    residuals: np.ndarray
    bound: float | None = None
    bound_satisfied: bool | None = None
    window: tuple[float, float] = (np.nan, np.nan)

    @property
    def rms_residual(self) -> float:
        return float(np.sqrt(np.mean(self.residuals**2)))

    @property
    def margin(self) -> float | None:
        return None if self.bound is None else self.bound - self.delta_hat


def fit_exponent(
    series: CountSeries,
    kind: str,
    d: int,
    window: tuple[float, float] | None = None,
    bound: float | None = None,
    slack: float = 0.05,
) -> FitResult:
    """Least-squares slope of log(count * T^p) against T over the uncensored
    grid points with positive counts.

    The default window is the upper half of the T-range of those points."""
    counts = np.asarray(series.column(kind), dtype=float)
    T = series.T
    usable = (counts > 0) & ~np.asarray(series.censored, dtype=bool)
    if usable.sum() < MIN_FIT_POINTS:
        raise FitError("fewer than four uncensored grid points with positive counts")
    if window is None:
        lo, hi = T[usable].min(), T[usable].max()
        window = (0.5 * (lo + hi), hi)
    m = usable & (T >= window[0]) & (T <= window[1])
    if m.sum() < MIN_FIT_POINTS:
        raise FitError("fewer than four usable grid points in the window")
    p = poly_exponent(kind, d)
    y = np.log(counts[m]) + p * np.log(T[m])
    slope, intercept = np.polyfit(T[m], y, 1)
    residuals = y - (slope * T[m] + intercept)
    satisfied = None if bound is None else bool(slope <= bound + slack)
    return FitResult(kind, float(slope), p, float(intercept), T[m], residuals, bound, satisfied, tuple(window))


@dataclass
class PredictionComparison:
    """Observed/predicted ratios after fitting kappa (from Jordan counts) and
    |m| (from Cartan counts, given kappa).  These two scalars absorb the
    constants, so the ratios test shape, not normalisation."""

    T: np.ndarray
    kappa: float
    m_norm: float
    ratio_jordan: np.ndarray | None = None
    ratio_cartan: np.ndarray | None = None
    drift: dict = field(default_factory=dict)
    non_falsifiable: bool = True

    def summary(self) -> dict:
        out = {"kappa": self.kappa, "m_norm": self.m_norm, "non_falsifiable": self.non_falsifiable}
        for name, r in (("jordan", self.ratio_jordan), ("cartan", self.ratio_cartan)):
            if r is not None and np.isfinite(r).any():
                ok = np.isfinite(r)
                out[f"{name}_max_deviation"] = float(np.max(np.abs(r[ok] - 1)))
                out[f"{name}_drift"] = self.drift.get(name, np.nan)
        return out


def _log_scale(observed: np.ndarray, predicted: np.ndarray, mask: np.ndarray) -> float:
    m = mask & (observed > 0) & (predicted > 0)
    if not m.any():
        return np.nan
    return float(np.exp(np.mean(np.log(observed[m]) - np.log(predicted[m]))))


def _drift(T, ratio, mask) -> float:
    m = mask & np.isfinite(ratio) & (ratio > 0)
    if m.sum() < 2:
        return np.nan
    return float(np.polyfit(T[m], np.log(ratio[m]), 1)[0])


def compare_to_prediction(
    series: CountSeries,
    unit_jordan: Sequence[float] | None,
    unit_cartan: Sequence[float] | None,
    fit: FitResult | None = None,
) -> PredictionComparison:
    """``unit_*`` are predictions with kappa = |m| = 1; Jordan predictions
    scale with kappa and Cartan predictions with kappa / |m|.  Only uncensored
    points (and those in the fit window, when given) enter the scalars."""
    T = series.T
    mask = ~np.asarray(series.censored, dtype=bool)
    if fit is not None:
        mask &= (T >= fit.window[0]) & (T <= fit.window[1])
    kappa, ratio = 1.0, {}
    if unit_jordan is not None and series.jordan_count is not None:
        pred = np.asarray(unit_jordan, dtype=float)
        obs = np.asarray(series.jordan_count, dtype=float)
        kappa = _log_scale(obs, pred, mask)
        ratio["jordan"] = np.where(pred > 0, obs / (kappa * pred), np.nan)
    m_norm = 1.0
    if unit_cartan is not None and series.cartan_count is not None:
        pred = np.asarray(unit_cartan, dtype=float)
        obs = np.asarray(series.cartan_count, dtype=float)
        scale = _log_scale(obs, pred, mask)
        if unit_jordan is None:
            kappa = scale
        m_norm = kappa / scale
        ratio["cartan"] = np.where(pred > 0, obs / (scale * pred), np.nan)
    drift = {k: _drift(T, v, mask) for k, v in ratio.items()}
    return PredictionComparison(T, kappa, m_norm, ratio.get("jordan"), ratio.get("cartan"), drift)
