"""End-to-end counting experiments over enumerated spectra.

Jordan counts run over conjugacy classes, Cartan counts over elements.  A
count at ``T`` is trusted only below the completeness horizon: words longer
than the enumerated length have, by the empirical Anosov bound, projections
too large to reach the box.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from ..cache import SpectrumCache, resolve_cache_dir
from ..cone import (
    ChamberSpace,
    ConeError,
    LimitConeEstimate,
    LinearMapPhi,
    SliceCone,
    SliceQuadraticModel,
    TangentEnvelope,
    check_properness,
    estimate_delta,
    estimate_limit_cone,
    fit_concave_model,
    functional_horizon,
    tangent_envelope,
)
from ..critical import (
    CriticalVectorError,
    CriticalVectorProblem,
    CriticalVectorResult,
    solve_critical_vector,
    sup_value_bound_check,
)
from ..hypertube import BoxFamily, Hypertube, HypertubeError, OffsetFunction, TruncationSpec, build_from_box_family
from ..sampling import SpectrumSample, build_sample
from ..spectra import canonical_signs
from .config import ExperimentConfig

__all__ = [
    "ExperimentError",
    "CountSeries",
    "ExceptionalSet",
    "Geometry",
    "Experiment",
    "box_counts",
    "completeness_horizon",
    "holonomy_group",
    "theta_fraction",
    "run_correlation_count",
    "run_truncation_count",
]

log = logging.getLogger(__name__)

KINDS = ("jordan", "cartan")


class ExperimentError(RuntimeError):
    pass


@dataclass
class CountSeries:
    """Per-T counts; ``None`` columns were not computed."""

    T: np.ndarray
    jordan_count: np.ndarray | None = None
    cartan_count: np.ndarray | None = None
    theta_count: np.ndarray | None = None
    censored: np.ndarray | None = None
    T_complete: float = np.inf

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=float)
        if self.censored is None:
            self.censored = self.T > self.T_complete

    def column(self, kind: str) -> np.ndarray:
        col = {"jordan": self.jordan_count, "cartan": self.cartan_count, "theta": self.theta_count}[kind]
        if col is None:
            raise ExperimentError(f"no {kind} counts in this series")
        return col

    def merged(self, other: "CountSeries") -> "CountSeries":
        if not np.array_equal(self.T, other.T):
            raise ExperimentError("series on different grids")
        pick = lambda a, b: a if a is not None else b  # noqa: E731
        T_complete = min(self.T_complete, other.T_complete)
        return CountSeries(
            self.T,
            pick(self.jordan_count, other.jordan_count),
            pick(self.cartan_count, other.cartan_count),
            pick(self.theta_count, other.theta_count),
            self.T > T_complete,
            T_complete,
        )


@dataclass
class ExceptionalSet:
    """Elements counted in some box whose Cartan projection is outside the
    cone cutting the hypertube, with the per-T number of them."""

    words: list[str]
    vectors: np.ndarray
    per_T: np.ndarray


def box_counts(
    y: np.ndarray, r: Sequence[float], eps: Sequence[float], T_grid: Sequence[float], mask: np.ndarray | None = None
) -> np.ndarray:
    """#{rows with r_i T <= y_i <= r_i T + eps_i for all i} for each T.

    Rows are sorted on the first coordinate so each T only scans the rows in
    its first slab; the comparisons are the same as the direct test."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    r, eps = np.asarray(r, dtype=float), np.asarray(eps, dtype=float)
    if mask is not None:
        y = y[mask]
    order = np.argsort(y[:, 0], kind="stable")
    ys = y[order]
    first = ys[:, 0]
    out = np.zeros(len(T_grid), dtype=np.int64)
    for k, T in enumerate(T_grid):
        lo = np.searchsorted(first, r[0] * T, side="left")
        hi = np.searchsorted(first, r[0] * T + eps[0], side="right")
        seg = ys[lo:hi]
        out[k] = int(np.all((seg >= r * T) & (seg <= r * T + eps), axis=1).sum())
    return out


def in_box(y: np.ndarray, r, eps, T: float) -> np.ndarray:
    r, eps = np.asarray(r, dtype=float), np.asarray(eps, dtype=float)
    return np.all((y >= r * T) & (y <= r * T + eps), axis=1)


def completeness_horizon(sample: SpectrumSample, phi: LinearMapPhi, r, eps) -> float:
    """Largest T such that no word longer than the enumeration can land in
    the box at any T' <= T: some row i must have r_i T' + eps_i below the
    lower bound of phi_i at the first missing length."""
    best = -np.inf
    for i in range(phi.d):
        H = functional_horizon(sample, phi.rows[i])
        if np.isfinite(H):
            best = max(best, (H - eps[i]) / r[i])
    return float(best)


def _blocks(pattern, dims):
    out, start = [], 0
    for n in dims:
        out.append(tuple(pattern[start : start + n]))
        start += n
    return out


def _product(p, q, dims) -> tuple[int, ...]:
    prod = np.multiply(p, q)
    return tuple(itertools.chain.from_iterable(canonical_signs(b) for b in _blocks(prod, dims)))


def holonomy_group(patterns: np.ndarray, dims: Sequence[int]) -> set[tuple[int, ...]]:
    """Subgroup of blockwise projective sign patterns generated by the rows."""
    gens = {tuple(int(s) for s in row) for row in np.unique(np.asarray(patterns), axis=0)}
    identity = tuple(1 for _ in range(sum(dims)))
    group = {identity}
    frontier = [identity]
    while frontier:
        nxt = []
        for g in frontier:
            for s in gens:
                h = _product(g, s, dims)
                if h not in group:
                    group.add(h)
                    nxt.append(h)
        frontier = nxt
    return group


def theta_fraction(theta, group: set) -> float:
    if theta is None:
        return 1.0
    return len({tuple(p) for p in theta} & group) / len(group)


@dataclass
class Geometry:
    space: ChamberSpace
    limit_cone: LimitConeEstimate
    cone: SliceCone
    proper: bool
    envelope: TangentEnvelope
    model: SliceQuadraticModel
    critical: CriticalVectorResult
    factor_deltas: np.ndarray
    hypertube: Hypertube
    b1: OffsetFunction
    b2: OffsetFunction

    @property
    def v_star(self) -> np.ndarray:
        return self.critical.v_star

    @property
    def psi_hat(self) -> float:
        return self.critical.value


@dataclass
class Experiment:
    """Lazily computed samples, geometry and counts for one configuration."""

    cfg: ExperimentConfig
    cache_dir: str | None = None
    shard_count: int | None = None
    workers: int | None = 1
    _samples: dict = field(default_factory=dict, init=False, repr=False)

    def derived(self, **changes) -> "Experiment":
        """Same experiment with config fields replaced.  Samples are shared
        when the representations, word length and gap tolerance are kept."""
        new = Experiment(self.cfg.replace(**changes), self.cache_dir, self.shard_count, self.workers)
        if not changes.keys() & {"representations", "max_word_length", "gap_tol"}:
            new._samples = self._samples
        return new

    @property
    def shards(self) -> int:
        return self.shard_count or self.cfg.shard_count

    def sample(self, kind: str) -> SpectrumSample:
        """``kind`` is "classes" or "elements"."""
        if kind not in self._samples:
            reps = self.cfg.reps()
            # explicit directory, then the environment variable, then the config
            root = resolve_cache_dir(self.cache_dir or None) or resolve_cache_dir(self.cfg.cache_dir or None)
            args = (reps, self.cfg.max_word_length, kind, self.shards, self.workers, self.cfg.gap_tol)
            if root is None:
                s = build_sample(*args)
            else:
                s = SpectrumCache(root).sample(*args)
            if len(s) == 0:
                raise ExperimentError("empty enumeration")
            self._samples[kind] = s
        return self._samples[kind]

    @property
    def classes(self) -> SpectrumSample:
        return self.sample("classes")

    @property
    def elements(self) -> SpectrumSample:
        return self.sample("elements")

    @property
    def phi(self) -> LinearMapPhi:
        return self.cfg.phi

    @property
    def r(self) -> np.ndarray:
        return np.array(self.cfg.r)

    @property
    def eps(self) -> np.ndarray:
        return np.array(self.cfg.epsilon)

    @property
    def T(self) -> np.ndarray:
        return np.array(self.cfg.T_grid)

    @cached_property
    def space(self) -> ChamberSpace:
        return ChamberSpace(self.classes.dims)

    @cached_property
    def limit_cone(self) -> LimitConeEstimate:
        return estimate_limit_cone(self.classes, 1)

    @cached_property
    def cone(self) -> SliceCone:
        return self.limit_cone.working_cone(self.space, self.cfg.dilation)

    @cached_property
    def factor_deltas(self) -> np.ndarray:
        """Critical exponent of each row of phi on Cartan projections."""
        return np.array([estimate_delta(self.elements, self.phi.functional(i)) for i in range(self.phi.d)])

    @cached_property
    def geometry(self) -> Geometry:
        space, lc, cone = self.space, self.limit_cone, self.cone
        proper = check_properness(self.phi, lc)
        if not proper:
            raise ExperimentError("phi is not proper on the limit cone")
        wide = lc.working_cone(space, 1.0)
        rows = [self.phi.rows[i] for i in range(self.phi.d)]
        try:
            deltas = self.factor_deltas
            env = tangent_envelope(self.elements, wide, space, extra=rows)
            model = fit_concave_model(env, cone)
            crit = solve_critical_vector(CriticalVectorProblem(model, self.phi, self.r, lc, space))
        except (ConeError, CriticalVectorError) as exc:
            raise ExperimentError(f"growth model: {exc}") from exc
        try:
            h, b1, b2 = build_from_box_family(BoxFamily(self.phi, self.r, self.eps), crit.v_star, crit.tangent, cone, space)
        except HypertubeError as exc:
            raise ExperimentError(f"hypertube: {exc}") from exc
        return Geometry(space, lc, cone, proper, env, model, crit, deltas, h, b1, b2)

    def bound_check(self, slack: float = 0.05) -> dict:
        return sup_value_bound_check(self.geometry.critical, self.factor_deltas, self.r, slack)

    # -- counting ---------------------------------------------------------

    def _points(self, kind: str) -> tuple[SpectrumSample, np.ndarray]:
        if kind == "jordan":
            s = self.classes
            return s, s.vectors
        if kind == "cartan":
            s = self.elements
            return s, s.vectors
        raise ValueError(f"kind must be one of {KINDS}")

    def horizon(self, kind: str) -> float:
        s, _ = self._points(kind)
        return completeness_horizon(s, self.phi, self.r, self.eps)

    def _check_counting(self) -> None:
        if not check_properness(self.phi, self.limit_cone):
            raise ExperimentError("phi is not proper on the limit cone")
        img = self.phi(self.limit_cone.rays)
        try:
            res = linprog(
                np.r_[np.zeros(len(img)), -1.0],
                A_ub=np.column_stack([-np.eye(len(img)), np.ones(len(img))]),
                b_ub=np.zeros(len(img)),
                A_eq=np.column_stack([img.T, np.zeros(self.phi.d)]),
                b_eq=self.r,
                bounds=[(0, None)] * len(img) + [(None, 1.0)],
                method="highs",
            )
        except ValueError as exc:  # pragma: no cover - malformed LP
            raise ExperimentError(str(exc)) from exc
        if res.status != 0 or res.x[-1] <= 1e-12:
            raise ExperimentError("r is not in the interior of the projected limit cone")

    def count(self, kind: str) -> CountSeries:
        self._check_counting()
        s, x = self._points(kind)
        y = self.phi(x)
        counts = box_counts(y, self.r, self.eps, self.T)
        Tc = self.horizon(kind)
        if kind == "jordan":
            theta = None
            if self.cfg.theta is not None:
                allowed = {tuple(p) for p in self.cfg.theta}
                pats = [tuple(row) for row in s.signs.tolist()]
                mask = s.loxodromic & np.array([p in allowed for p in pats], dtype=bool)
                theta = box_counts(y, self.r, self.eps, self.T, mask)
            return CountSeries(self.T, jordan_count=counts, theta_count=theta, T_complete=Tc)
        return CountSeries(self.T, cartan_count=counts, T_complete=Tc)

    def counts(self) -> CountSeries:
        return self.count("jordan").merged(self.count("cartan"))

    def truncation_count(self, b: OffsetFunction, kind: str, h: Hypertube | None = None) -> CountSeries:
        """#{points in the truncation T_{T,b}} along the grid."""
        h = h or self.geometry.hypertube
        _, x = self._points(kind)
        dec = h.decompose(x)
        inside = h.cone.contains(x) & h.in_q(dec.q) & (dec.t >= 0)
        excess = np.sort(dec.t[inside] - b(dec.q[inside]))
        counts = np.searchsorted(excess, self.T, side="right").astype(np.int64)
        series = CountSeries(self.T, T_complete=self.horizon(kind))
        setattr(series, f"{kind}_count", counts)
        return series

    def exceptional(self, kind: str = "cartan") -> ExceptionalSet:
        """Points in some uncensored box whose projection is outside C."""
        s, x = self._points(kind)
        y = self.phi(x)
        outside = ~self.geometry.cone.contains(x)
        Tc = self.horizon(kind)
        idx = np.flatnonzero(outside)
        per_T = np.zeros(len(self.T), dtype=np.int64)
        hit = np.zeros(len(idx), dtype=bool)
        for k, T in enumerate(self.T):
            m = in_box(y[idx], self.r, self.eps, T)
            per_T[k] = m.sum()
            if T <= Tc:
                hit |= m
        chosen = idx[hit]
        return ExceptionalSet(s.labels(chosen), x[chosen], per_T)

    def holonomy(self) -> set[tuple[int, ...]]:
        s = self.classes
        return holonomy_group(s.signs[s.loxodromic], s.dims)

    def theta_fraction(self) -> float:
        return theta_fraction(self.cfg.theta, self.holonomy())


def _experiment(cfg_or_exp) -> Experiment:
    return cfg_or_exp if isinstance(cfg_or_exp, Experiment) else Experiment(cfg_or_exp)


def run_correlation_count(cfg: ExperimentConfig | Experiment, kind: str) -> CountSeries:
    return _experiment(cfg).count(kind)


def run_truncation_count(
    cfg: ExperimentConfig | Experiment, b: OffsetFunction, kind: str, h: Hypertube | None = None
) -> CountSeries:
    return _experiment(cfg).truncation_count(b, kind, h)


def truncation_spec(h: Hypertube, b: OffsetFunction, T: float = 0.0) -> TruncationSpec:
    return TruncationSpec(h.v, b, T)
