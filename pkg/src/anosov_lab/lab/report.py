"""Prediction tables and report files (CSV plus a text summary)."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..asymptotics import AsymptoticParams, DefectForm, constant_c, predict_counts, scaled_integral
from ..hypertube import TruncationSpec
from .config import emit_config
from .experiment import CountSeries, Experiment
from .fitting import FitError, FitResult, PredictionComparison, compare_to_prediction, fit_exponent

__all__ = [
    "COUNT_COLUMNS",
    "PREDICTION_COLUMNS",
    "PredictionTable",
    "Artifacts",
    "prediction_table",
    "run_report",
    "counts_csv",
    "predictions_csv",
    "summary_text",
    "emit_report",
]

COUNT_COLUMNS = ("T", "jordan_count", "cartan_count", "theta_count", "censored")
PREDICTION_COLUMNS = ("T", "L", "c", "ratio", "prediction_jordan", "prediction_cartan")


@dataclass
class PredictionTable:
    T: np.ndarray
    L: np.ndarray
    c: float
    ratio: np.ndarray
    unit_jordan: np.ndarray
    unit_cartan: np.ndarray
    params: AsymptoticParams
    d: int
    comparison: PredictionComparison | None = None

    @property
    def prediction_jordan(self) -> np.ndarray:
        kappa = self.comparison.kappa if self.comparison else 1.0
        return kappa * self.unit_jordan

    @property
    def prediction_cartan(self) -> np.ndarray:
        if self.comparison is None:
            return self.unit_cartan
        return self.comparison.kappa / self.comparison.m_norm * self.unit_cartan


def prediction_table(exp: Experiment, form: DefectForm | None = None) -> PredictionTable:
    """Box integral ``L = L(b1) - L(b2)`` along the grid with its limiting
    constant, and count predictions for unit kappa and |m|."""
    g = exp.geometry
    h = g.hypertube
    d = exp.phi.d
    form = form or DefectForm.euclidean(h.v, h.psi_v)
    params = AsymptoticParams(g.psi_hat, 1.0, 1.0, exp.theta_fraction())
    c1 = constant_c(h, g.b1, params, form)
    c2 = constant_c(h, g.b2, params, form)
    c = c1 - c2
    T = exp.T
    scaled = np.array(
        [
            scaled_integral(h, TruncationSpec(h.v, g.b1, t), params, form)
            - scaled_integral(h, TruncationSpec(h.v, g.b2, t), params, form)
            for t in T
        ]
    )
    L = scaled * np.exp(params.delta_v * T)
    ratio = scaled * T ** ((d - 1) / 2) / c
    unit_j = predict_counts("correlation-jordan", params, T, d, c_b1=c1, c_b2=c2)
    unit_c = predict_counts("correlation-cartan", params, T, d, c_b1=c1, c_b2=c2)
    return PredictionTable(T, L, c, ratio, np.atleast_1d(unit_j), np.atleast_1d(unit_c), params, d)


@dataclass
class Artifacts:
    exp: Experiment
    series: CountSeries
    fits: dict
    table: PredictionTable | None
    bound: dict
    holonomy: set
    exceptional: object


def run_report(exp: Experiment, predictions: bool = True) -> Artifacts:
    series = exp.counts()
    bound = exp.bound_check()
    fits: dict = {}
    for kind in ("jordan", "cartan") + (("theta",) if series.theta_count is not None else ()):
        try:
            fits[kind] = fit_exponent(series, kind, exp.phi.d, bound=bound["bound"])
        except FitError as exc:
            fits[kind] = str(exc)
    table = None
    if predictions:
        table = prediction_table(exp)
        fit = fits.get("cartan") if isinstance(fits.get("cartan"), FitResult) else None
        table.comparison = compare_to_prediction(series, table.unit_jordan, table.unit_cartan, fit)
    return Artifacts(exp, series, fits, table, bound, exp.holonomy(), exp.exceptional("cartan"))


def _write_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def counts_csv(series: CountSeries) -> str:
    n = len(series.T)
    cols = [series.T, series.jordan_count, series.cartan_count, series.theta_count, series.censored]
    rows = [[_num(None if c is None else c[k]) for c in cols] for k in range(n)]
    return _write_csv(COUNT_COLUMNS, rows)


def predictions_csv(table: PredictionTable) -> str:
    pj, pc = table.prediction_jordan, table.prediction_cartan
    rows = [
        [_num(table.T[k]), _num(table.L[k]), _num(table.c), _num(table.ratio[k]), _num(pj[k]), _num(pc[k])]
        for k in range(len(table.T))
    ]
    return _write_csv(PREDICTION_COLUMNS, rows)


def _fmt(xs) -> str:
    return " ".join(f"{x:.10g}" for x in np.atleast_1d(xs))


def summary_text(art: Artifacts) -> str:
    exp, g = art.exp, art.exp.geometry
    lines = [
        f"experiment: {exp.cfg.name}",
        f"max_word_length: {exp.cfg.max_word_length}",
        f"classes: {len(exp.classes)}",
        f"elements: {len(exp.elements)}",
        f"limit_cone_rays: {len(g.limit_cone.rays)}",
        f"proper: {g.proper}",
        f"v_star: {_fmt(g.v_star)}",
        f"delta_model: {g.psi_hat:.10g}",
        f"tangent: {_fmt(g.critical.tangent.coefficients)}",
        f"kernel_residual: {g.critical.kernel_residual:.3e}",
        f"factor_deltas: {_fmt(g.factor_deltas)}",
        f"bound_min_delta_r: {art.bound['bound']:.10g}",
        f"bound_satisfied_by_model: {art.bound['satisfied']}",
        f"T_complete: {art.series.T_complete:.10g}",
        f"censored_points: {int(np.sum(art.series.censored))}",
    ]
    group = sorted(art.holonomy)
    lines.append(f"holonomy_group_order: {len(group)}")
    lines += [f"  {' '.join(f'{s:+d}' for s in p)}" for p in group]
    lines.append(f"theta_fraction: {exp.theta_fraction():.10g}")
    for kind, fit in art.fits.items():
        if isinstance(fit, FitResult):
            lines.append(
                f"fit_{kind}: delta_hat {fit.delta_hat:.6f} p {fit.poly_exponent_used:g} "
                f"window [{fit.window[0]:.4g}, {fit.window[1]:.4g}] rms {fit.rms_residual:.3e} "
                f"bound_satisfied {fit.bound_satisfied}"
            )
        else:
            lines.append(f"fit_{kind}: unavailable ({fit})")
    lines.append(f"exceptional_cartan_elements: {len(art.exceptional.words)}")
    lines += [f"  {w}" for w in art.exceptional.words[:20]]
    if art.table is not None:
        t = art.table
        lines.append(f"c_box: {t.c:.10g}")
        lines.append(f"integral_ratio_final: {t.ratio[-1]:.8f}")
        if t.comparison is not None:
            s = t.comparison.summary()
            lines.append(f"fitted_kappa: {s['kappa']:.6g}")
            lines.append(f"fitted_m_norm: {s['m_norm']:.6g}")
            for key in ("jordan_drift", "cartan_drift"):
                if key in s and not math.isnan(s[key]):
                    lines.append(f"{key}: {s[key]:.4g}")
            lines.append("constants: fitted products only, not testable at this scale")
    return "\n".join(lines) + "\n"


def emit_report(art: Artifacts, out: str | Path) -> dict[str, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    name = art.exp.cfg.name
    files = {
        "counts": out / f"{name}-counts.csv",
        "summary": out / f"{name}-summary.txt",
        "config": out / f"{name}-config.yaml",
    }
    files["counts"].write_text(counts_csv(art.series))
    files["summary"].write_text(summary_text(art))
    files["config"].write_text(emit_config(art.exp.cfg))
    if art.table is not None:
        files["predictions"] = out / f"{name}-predictions.csv"
        files["predictions"].write_text(predictions_csv(art.table))
    return files
