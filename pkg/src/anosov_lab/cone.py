"""Limit cones, growth indicators and critical exponents estimated from samples.

Vectors live in an ambient space that is a product of chamber spaces (one
block per representation, concatenated).  Only the trace-free part of each
block carries information; :class:`ChamberSpace` keeps an orthonormal basis
of that part and the simple-root inequalities cutting out the chamber.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import block_diag, null_space
from scipy.optimize import linprog, nnls
from scipy.spatial import ConvexHull, HalfspaceIntersection

from .sampling import SpectrumSample
from .spectra import anosov_gap_constant, simple_roots

__all__ = [
    "ConeError",
    "ChamberSpace",
    "LinearFunctional",
    "LinearMapPhi",
    "SliceCone",
    "cone_from_directions",
    "LimitConeEstimate",
    "GrowthIndicatorEstimate",
    "SliceQuadraticModel",
    "estimate_limit_cone",
    "directional_count",
    "estimate_growth_indicator",
    "growth_indicator",
    "estimate_delta",
    "estimate_tangent_form",
    "check_properness",
    "min_norm_on_hull",
    "gap_constants",
    "root_coordinates",
    "lower_bound_at_length",
    "norm_horizon",
    "functional_horizon",
    "regression_window",
    "fit_concave_model",
    "TangentEnvelope",
    "tangent_envelope",
]

log = logging.getLogger(__name__)

DEFAULT_APERTURE = 0.15
MIN_WINDOW_COUNT = 30
SAFETY = 0.9


class ConeError(ValueError):
    pass


# -- spaces and linear maps -----------------------------------------------------


@dataclass
class ChamberSpace:
    """Product of chamber spaces of the given block dimensions.

    ``synthetic`` spaces are plain R^n with the positive orthant as chamber,
    used for closed-form test models.
    """

    dims: tuple[int, ...]
    synthetic: bool = False
    basis: np.ndarray = field(init=False, repr=False)
    roots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        if self.synthetic:
            (n,) = self.dims
            self.basis = np.eye(n)
            self.roots = np.eye(n)
            return
        if any(n < 2 for n in self.dims):
            raise ValueError("chamber blocks need dimension >= 2")
        self.basis = block_diag(*[null_space(np.ones((1, n))) for n in self.dims])
        self.roots = block_diag(*[simple_roots(n) for n in self.dims])

    @classmethod
    def euclidean(cls, n: int) -> "ChamberSpace":
        return cls((n,), synthetic=True)

    @property
    def ambient_dim(self) -> int:
        return sum(self.dims)

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def project(self, x: np.ndarray) -> np.ndarray:
        """Orthogonal projection onto the trace-free subspace."""
        return np.asarray(x, dtype=float) @ self.basis @ self.basis.T

    def in_chamber(self, x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        scale = np.maximum(1.0, np.linalg.norm(x, axis=1))
        return np.all(x @ self.roots.T >= -tol * scale[:, None], axis=1)


@dataclass(frozen=True)
class LinearFunctional:
    coefficients: tuple[float, ...]

    def __post_init__(self):
        coeffs = tuple(float(c) for c in np.ravel(self.coefficients))
        if not all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.coefficients)

    def __call__(self, x: np.ndarray) -> np.ndarray | float:
        out = np.asarray(x, dtype=float) @ self.vector
        return float(out) if np.ndim(out) == 0 else out

    def scaled(self, t: float) -> "LinearFunctional":
        return LinearFunctional(tuple(t * c for c in self.coefficients))


@dataclass
class LinearMapPhi:
    """Linear map R^D -> R^d given by its rows."""

    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("rows must be finite")
        if np.linalg.matrix_rank(self.rows) < self.rows.shape[0]:
            raise ValueError("rows of phi must be linearly independent")

    @property
    def d(self) -> int:
        return self.rows.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.rows.shape[1]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.rows.T

    def functional(self, i: int) -> LinearFunctional:
        return LinearFunctional(tuple(self.rows[i]))

    def restricted(self, space: ChamberSpace) -> np.ndarray:
        """Matrix of phi in the orthonormal coordinates of ``space``."""
        return self.rows @ space.basis

    def kernel_basis(self, space: ChamberSpace | None = None) -> np.ndarray:
        """Orthonormal basis (columns) of ker phi, inside ``space`` if given."""
        if space is None:
            return null_space(self.rows)
        k = null_space(self.restricted(space))
        return space.basis @ k

    def preimage(self, r: Sequence[float], space: ChamberSpace | None = None) -> np.ndarray:
        """Minimum-norm solution of phi(w) = r (inside ``space`` if given)."""
        r = np.asarray(r, dtype=float)
        if space is None:
            return np.linalg.lstsq(self.rows, r, rcond=None)[0]
        a = self.restricted(space)
        if np.linalg.matrix_rank(a) < self.d:
            raise ValueError("phi is not surjective on the chamber space")
        return space.basis @ np.linalg.lstsq(a, r, rcond=None)[0]

    def scaled(self, t: float) -> "LinearMapPhi":
        return LinearMapPhi(t * self.rows)


# -- polyhedral cones through an affine slice -----------------------------------


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


@dataclass
class SliceCone:
    """Pointed polyhedral cone described through its slice {<x, c> = 1}.

    Slice points are ``c + z @ P`` with ``z`` in R^m; the slice polytope is
    ``{z : A z + b <= 0}`` with vertices ``vertices``.  For m = 0 the cone is
    the single ray through ``c``.
    """

    center: np.ndarray
    frame: np.ndarray
    A: np.ndarray
    b: np.ndarray
    vertices: np.ndarray

    @property
    def slice_dim(self) -> int:
        return self.frame.shape[0]

    @property
    def rays(self) -> np.ndarray:
        return _unit(self.center + self.vertices @ self.frame)

    @property
    def span(self) -> np.ndarray:
        """Orthonormal basis (columns) of the linear span of the cone."""
        return np.column_stack([self.center, self.frame.T]) if self.slice_dim else self.center[:, None]

    def inequalities(self) -> np.ndarray:
        """Rows G with x in the cone iff G x <= 0 and x lies in the span."""
        rows = [-self.center]
        if self.slice_dim:
            rows.extend(self.A @ self.frame + self.b[:, None] * self.center)
        return np.array(rows)

    def slice_coordinates(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(s, z, off)``: height <x,c>, slice coordinates and the
        distance of x from the span (relative to |x|)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = x @ self.center
        z = (x @ self.frame.T) / np.where(s > 0, s, 1.0)[:, None]
        resid = x - np.outer(s, self.center) - (x @ self.frame.T) @ self.frame
        norm = np.maximum(np.linalg.norm(x, axis=1), 1e-300)
        return s, z, np.linalg.norm(resid, axis=1) / norm

    def margins(self, x: np.ndarray) -> np.ndarray:
        """Signed slice margin: >= 0 inside, < 0 outside (per unit height)."""
        s, z, off = self.slice_coordinates(x)
        if self.slice_dim:
            m = -(z @ self.A.T + self.b).max(axis=1)
        else:
            m = np.zeros(len(s))
        m = np.where(off > 1e-9, -off, m)
        return np.where(s > 0, m, -np.inf)

    def contains(self, x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        s, z, off = self.slice_coordinates(x)
        ok = (s > 0) & (off <= max(tol, 1e-12))
        if self.slice_dim:
            ok &= np.all(z @ self.A.T + self.b <= tol, axis=1)
        return ok

    def dilated(self, factor: float) -> "SliceCone":
        """Scale the slice polytope about its vertex centroid by ``1 + factor``."""
        if not self.slice_dim:
            return self
        z0 = self.vertices.mean(axis=0)
        # y is in the dilation iff z0 + (y - z0) / (1+f) is in the original
        b = (1.0 + factor) * self.b + factor * (self.A @ z0)
        return _from_halfspaces(self.center, self.frame, self.A, b)

    def intersected(self, rows: np.ndarray) -> "SliceCone":
        """Intersect with {x : rows @ x <= 0}."""
        rows = np.atleast_2d(rows)
        if not self.slice_dim:
            if np.all(rows @ self.center <= 1e-12):
                return self
            raise ConeError("intersection is empty")
        A = np.vstack([self.A, rows @ self.frame.T])
        b = np.concatenate([self.b, rows @ self.center])
        return _from_halfspaces(self.center, self.frame, A, b)

    def interior_point(self) -> np.ndarray:
        if not self.slice_dim:
            return self.center.copy()
        return self.center + self.vertices.mean(axis=0) @ self.frame

    def to_text(self) -> str:
        lines = ["rays:"]
        lines += ["  " + " ".join(f"{v:.12g}" for v in ray) for ray in self.rays]
        return "\n".join(lines)


def _normalize_halfspaces(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(A, axis=1)
    keep = norms > 1e-14
    if np.any(~keep & (b > 1e-12)):
        raise ConeError("infeasible constraint")
    return A[keep] / norms[keep, None], b[keep] / norms[keep]


def _from_halfspaces(center, frame, A, b) -> SliceCone:
    A, b = _normalize_halfspaces(A, b)
    m = frame.shape[0]
    if m == 1:
        a = A[:, 0]
        upper = np.min(-b[a > 0] / a[a > 0]) if np.any(a > 0) else np.inf
        lower = np.max(-b[a < 0] / a[a < 0]) if np.any(a < 0) else -np.inf
        if not (np.isfinite(upper) and np.isfinite(lower)) or upper <= lower:
            raise ConeError("slice interval is empty or unbounded")
        verts = np.array([[lower], [upper]])
        A = np.array([[1.0], [-1.0]])
        b = np.array([-upper, lower])
        return SliceCone(center, frame, A, b, verts)
    # Chebyshev centre for an interior point of the slice polytope
    norms = np.linalg.norm(A, axis=1)
    res = linprog(
        np.r_[np.zeros(m), -1.0],
        A_ub=np.column_stack([A, norms]),
        b_ub=-b,
        bounds=[(None, None)] * m + [(0, None)],
        method="highs",
    )
    if res.status != 0 or res.x[-1] <= 1e-12:
        raise ConeError("slice polytope has empty interior or is unbounded")
    hs = HalfspaceIntersection(np.column_stack([A, b]), res.x[:m])
    verts = hs.intersections
    hull = ConvexHull(verts)
    A_h, b_h = hull.equations[:, :m], hull.equations[:, m]
    return SliceCone(center, frame, A_h, b_h, verts[hull.vertices])


def cone_from_directions(directions: np.ndarray, rel_tol: float = 1e-9) -> SliceCone:
    """Smallest polyhedral cone containing the given unit directions."""
    u = _unit(np.atleast_2d(np.asarray(directions, dtype=float)))
    mean = u.mean(axis=0)
    if np.linalg.norm(mean) <= 1e-12:
        raise ConeError("directions do not lie in an open half-space")
    c = _unit(mean)
    h = u @ c
    if np.any(h <= 1e-9):
        raise ConeError("directions do not lie in an open half-space")
    y = u / h[:, None] - c
    _, sv, vt = np.linalg.svd(y, full_matrices=False)
    m = int(np.sum(sv > rel_tol * max(1.0, np.sqrt(len(y)))))
    frame = vt[:m]
    D = u.shape[1]
    if m == 0:
        return SliceCone(c, np.zeros((0, D)), np.zeros((0, 0)), np.zeros(0), np.zeros((1, 0)))
    z = y @ frame.T
    if m == 1:
        lo, hi = z[:, 0].min(), z[:, 0].max()
        return SliceCone(c, frame, np.array([[1.0], [-1.0]]), np.array([-hi, lo]), np.array([[lo], [hi]]))
    hull = ConvexHull(z)
    return SliceCone(c, frame, hull.equations[:, :m], hull.equations[:, m], z[hull.vertices])


# -- limit cone -----------------------------------------------------------------


@dataclass
class LimitConeEstimate:
    directions: np.ndarray
    hull: SliceCone
    min_length: int

    @property
    def rays(self) -> np.ndarray:
        return self.hull.rays

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        return self.hull.contains(x, tol)

    def working_cone(self, space: ChamberSpace, dilation: float = 0.05) -> SliceCone:
        """Hull dilated by ``dilation`` in the slice and cut by the chamber."""
        return self.hull.dilated(dilation).intersected(-space.roots)


def estimate_limit_cone(sample: SpectrumSample, min_length: int = 1) -> LimitConeEstimate:
    if sample.kind != "classes":
        raise ConeError("the limit cone is estimated from Jordan projections of classes")
    keep = (sample.lengths >= min_length) & sample.loxodromic
    if not keep.any():
        raise ConeError(f"no loxodromic classes of length >= {min_length}")
    dirs = _unit(sample.vectors[keep])
    return LimitConeEstimate(dirs, cone_from_directions(dirs), min_length)


# -- counting, growth indicator, critical exponents -----------------------------


def _vectors(sample: SpectrumSample) -> np.ndarray:
    if sample.kind == "classes":
        return sample.vectors[sample.loxodromic]
    return sample.vectors[sample.lengths > 0]


def directional_count(
    vectors: np.ndarray | SpectrumSample, direction: np.ndarray, aperture: float, T: float
) -> int:
    """Number of nonzero vectors in the open cone of half-angle ``aperture``
    about ``direction`` with norm <= T."""
    if aperture <= 0:
        raise ValueError("aperture must be positive")
    x = _vectors(vectors) if isinstance(vectors, SpectrumSample) else np.atleast_2d(vectors)
    norms = np.linalg.norm(x, axis=1)
    keep = (norms > 0) & (norms <= T)
    if aperture >= np.pi:
        return int(keep.sum())
    d = _unit(np.asarray(direction, dtype=float))
    cos = (x[keep] @ d) / norms[keep]
    return int(np.sum(np.arccos(np.clip(cos, -1.0, 1.0)) < aperture))


def gap_constants(sample: SpectrumSample) -> np.ndarray:
    """Empirical Anosov constants, one per representation block.

    Classes use Jordan projections against cyclic length; elements use
    Cartan projections against word length."""
    keep = sample.lengths > 0
    if sample.loxodromic is not None:
        keep &= sample.loxodromic
    if not keep.any():
        raise ConeError("no nontrivial rows to fit gap constants")
    out = []
    for i in range(len(sample.dims)):
        out.append(anosov_gap_constant(sample.lengths[keep], sample.block(i)[keep]))
    return np.array(out)


def root_coordinates(coefficients: np.ndarray, dims: Sequence[int]) -> list[np.ndarray]:
    """Coefficients of a functional's trace-free part on the simple roots of
    each block (partial sums of the centred block coefficients)."""
    out, start = [], 0
    for n in dims:
        a = np.asarray(coefficients[start : start + n], dtype=float)
        out.append(np.cumsum(a - a.mean())[:-1])
        start += n
    return out


def lower_bound_at_length(coefficients, dims, constants, length: float, safety: float = SAFETY) -> float:
    """Lower bound for a functional on chamber vectors of words of the given
    length, from ``root(x) >= C*length - 1/C`` per block.  ``-inf`` when the
    functional is not a nonnegative combination of simple roots."""
    total = 0.0
    for coords, C in zip(root_coordinates(np.asarray(coefficients), dims), constants):
        if np.any(coords < -1e-12):
            return -np.inf
        C = safety * C
        total += coords.sum() * max(C * length - 1.0 / C, 0.0)
    return total


def norm_horizon(sample: SpectrumSample, safety: float = SAFETY) -> float:
    """Radius below which every word longer than the sample's maximum length
    is excluded (uses |x| >= root(x)/sqrt(2))."""
    L = int(sample.lengths.max())
    C = safety * gap_constants(sample)
    return float(np.max(np.maximum(C * (L + 1) - 1.0 / C, 0.0)) / np.sqrt(2.0))


def functional_horizon(sample: SpectrumSample, coefficients, safety: float = SAFETY) -> float:
    L = int(sample.lengths.max())
    return lower_bound_at_length(coefficients, sample.dims, gap_constants(sample), L + 1, safety)


def regression_window(T: np.ndarray, counts: np.ndarray, min_count: int = MIN_WINDOW_COUNT):
    """Top half of the T-range on which counts reach ``min_count``."""
    ok = counts >= min_count
    if ok.sum() < 3:
        raise ConeError("insufficient data for a regression window")
    lo, hi = T[ok].min(), T[ok].max()
    return (0.5 * (lo + hi), hi)


def _slope(T: np.ndarray, counts: np.ndarray, window) -> float:
    lo, hi = window
    m = (T >= lo) & (T <= hi) & (counts > 0)
    if m.sum() < 3:
        raise ConeError("fewer than three positive counts in the window")
    return float(np.polyfit(T[m], np.log(counts[m]), 1)[0])


@dataclass
class GrowthIndicatorEstimate:
    """Empirical growth indicator: slope of log directional counts, extended
    to all vectors by degree-1 homogeneity."""

    sample: SpectrumSample
    aperture: float = DEFAULT_APERTURE
    window: tuple[float, float] | None = None
    grid_size: int = 64
    T_max: float | None = None
    _norms: np.ndarray = field(init=False, repr=False)
    _x: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._x = _vectors(self.sample)
        self._norms = np.linalg.norm(self._x, axis=1)
        if self.T_max is None:
            self.T_max = norm_horizon(self.sample)

    def counts(self, direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = _unit(np.asarray(direction, dtype=float))
        keep = self._norms > 0
        cos = (self._x[keep] @ d) / self._norms[keep]
        inside = np.arccos(np.clip(cos, -1.0, 1.0)) < self.aperture
        norms = np.sort(self._norms[keep][inside])
        T = np.linspace(self.T_max / self.grid_size, self.T_max, self.grid_size)
        return T, np.searchsorted(norms, T, side="right").astype(float)

    def unit_value(self, direction: np.ndarray) -> float:
        T, counts = self.counts(direction)
        window = self.window or regression_window(T, counts)
        return _slope(T, counts, window)

    def __call__(self, w: np.ndarray) -> float:
        w = np.asarray(w, dtype=float)
        n = np.linalg.norm(w)
        if n == 0:
            return 0.0
        return n * self.unit_value(w / n)


def estimate_growth_indicator(
    sample: SpectrumSample,
    direction: np.ndarray,
    aperture: float = DEFAULT_APERTURE,
    window: tuple[float, float] | None = None,
    T_max: float | None = None,
) -> float:
    """psi-hat along a unit direction (slope of log count against norm)."""
    gi = GrowthIndicatorEstimate(sample, aperture, window, T_max=T_max)
    return gi.unit_value(direction)


def growth_indicator(sample: SpectrumSample, aperture: float = DEFAULT_APERTURE, **kw) -> GrowthIndicatorEstimate:
    return GrowthIndicatorEstimate(sample, aperture, **kw)


def estimate_delta(
    sample: SpectrumSample,
    psi: LinearFunctional | np.ndarray,
    window: tuple[float, float] | None = None,
    T_max: float | None = None,
    grid_size: int = 64,
    return_series: bool = False,
):
    """Slope of log #{psi(x) < T} against T.

    ``T_max`` defaults to the completeness horizon for ``psi``.
    """
    coeffs = psi.vector if isinstance(psi, LinearFunctional) else np.asarray(psi, dtype=float)
    x = _vectors(sample)
    vals = x @ coeffs
    if np.any(vals <= 0):
        raise ConeError("functional is not positive on every sampled projection")
    if T_max is None:
        T_max = functional_horizon(sample, coeffs)
        if not np.isfinite(T_max) or T_max <= 0:
            raise ConeError("no completeness horizon for this functional; pass T_max")
    vals = np.sort(vals)
    T = np.linspace(T_max / grid_size, T_max, grid_size)
    counts = np.searchsorted(vals, T, side="left").astype(float)
    if window is None:
        window = regression_window(T, counts)
    delta = _slope(T, counts, window)
    return (delta, T, counts) if return_series else delta


# -- tangent forms and properness -----------------------------------------------


def estimate_tangent_form(
    psi: Callable[[np.ndarray], float],
    v: np.ndarray,
    space: ChamberSpace,
    step: float = 1e-3,
    cone: SliceCone | None = None,
) -> LinearFunctional:
    """Gradient of a degree-1 homogeneous function at ``v`` by central
    differences on the unit sphere, along the orthonormal basis of ``space``.

    Uses an analytic gradient when ``psi`` has a ``gradient`` method.
    """
    v = np.asarray(v, dtype=float)
    if hasattr(psi, "gradient"):
        return LinearFunctional(tuple(space.project(psi.gradient(v))))
    u = v / np.linalg.norm(v)
    if cone is not None:
        probe = np.array([u + s * step * e for e in space.basis.T for s in (1, -1)])
        if not np.all(cone.contains(probe)):
            raise ConeError("base point too close to the cone boundary")
    grad = np.zeros(space.rank)
    for j, e in enumerate(space.basis.T):
        grad[j] = (psi(u + step * e) - psi(u - step * e)) / (2 * step)
    return LinearFunctional(tuple(space.basis @ grad))


def min_norm_on_hull(points: np.ndarray) -> tuple[float, np.ndarray]:
    """Minimum Euclidean norm over the convex hull of the given points,
    with the minimising convex weights (bounded least squares)."""
    P = np.atleast_2d(points)
    big = 1e3 * max(1.0, np.abs(P).max())
    A = np.vstack([P.T, big * np.ones(len(P))])
    rhs = np.r_[np.zeros(P.shape[1]), big]
    weights, _ = nnls(A, rhs)
    weights = weights / weights.sum()
    return float(np.linalg.norm(weights @ P)), weights


def check_properness(phi: LinearMapPhi, cone: LimitConeEstimate | SliceCone, tol: float = 1e-6) -> bool:
    """True when ker phi meets the cone only at 0, tested as: the image of
    the convex hull of the unit extreme rays stays at distance > tol from 0."""
    rays = cone.rays
    value, _ = min_norm_on_hull(phi(rays))
    return value > tol


# -- smooth concave surrogate ----------------------------------------------------


@dataclass
class SliceQuadraticModel:
    """Degree-1 homogeneous concave function from a concave quadratic f on
    the slice {<w, c> = 1}: psi(w) = <w, c> f(P w / <w, c>)."""

    center: np.ndarray
    frame: np.ndarray
    f0: float
    g: np.ndarray
    H: np.ndarray
    residual: float = 0.0

    def _f(self, z):
        return self.f0 + z @ self.g - 0.5 * np.einsum("...i,ij,...j->...", z, self.H, z)

    def __call__(self, w: np.ndarray) -> float | np.ndarray:
        w = np.asarray(w, dtype=float)
        s = w @ self.center
        z = (w @ self.frame.T) / s[..., None] if np.ndim(s) else (w @ self.frame.T) / s
        return s * self._f(z)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        s = w @ self.center
        z = (w @ self.frame.T) / s
        grad_f = self.g - self.H @ z
        return (self._f(z) - grad_f @ z) * self.center + grad_f @ self.frame


def _slice_grid(cone: SliceCone, shrink: float, points_per_axis: int) -> np.ndarray:
    """Slice coordinates of a regular grid inside the slice polytope shrunk
    by ``shrink`` about its vertex centroid."""
    m = cone.slice_dim
    z0 = cone.vertices.mean(axis=0)
    lo, hi = cone.vertices.min(axis=0), cone.vertices.max(axis=0)
    axes = [np.linspace(a, b, points_per_axis) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    grid = z0 + shrink * (grid - z0)
    inside = np.all(grid @ cone.A.T + cone.b <= -1e-9, axis=1)
    inside &= np.all((z0 + (grid - z0) / shrink) @ cone.A.T + cone.b <= 0, axis=1)
    return grid[inside]


def fit_concave_model(
    gi: Callable[[np.ndarray], float],
    cone: SliceCone,
    shrink: float = 0.8,
    points_per_axis: int = 9,
) -> SliceQuadraticModel:
    """Least-squares concave quadratic through values of ``gi`` sampled on a
    grid of the slice polytope shrunk by ``shrink`` about its centroid."""
    m = cone.slice_dim
    if m == 0:
        val = float(gi(cone.center))
        return SliceQuadraticModel(cone.center, cone.frame, val, np.zeros(0), np.zeros((0, 0)))
    z = _slice_grid(cone, shrink, points_per_axis)
    if len(z) < (m + 1) * (m + 2) // 2 + 1:
        raise ConeError("too few grid points inside the cone to fit a model")
    w = cone.center + z @ cone.frame
    vals = np.array([gi(x) / (x @ cone.center) for x in w])
    iu = np.triu_indices(m)
    quad = np.einsum("ki,kj->kij", z, z)[:, iu[0], iu[1]]
    design = np.column_stack([np.ones(len(z)), z, quad])
    coef = np.linalg.lstsq(design, vals, rcond=None)[0]
    Q = np.zeros((m, m))
    Q[iu] = coef[1 + m :]
    Q = 0.5 * (Q + Q.T)  # f = ... + z^T Q z with off-diagonals split
    H = -2.0 * Q
    evals, evecs = np.linalg.eigh(H)
    if np.any(evals < 1e-6):
        # project onto the concave quadratics and refit the affine part
        H = (evecs * np.maximum(evals, 1e-6)) @ evecs.T
        target = vals + 0.5 * np.einsum("ki,ij,kj->k", z, H, z)
        aff = np.linalg.lstsq(design[:, : 1 + m], target, rcond=None)[0]
        coef = np.r_[aff, np.zeros(len(coef) - 1 - m)]
    f0, g = coef[0], coef[1 : 1 + m]
    model = SliceQuadraticModel(cone.center, cone.frame, float(f0), g, H)
    model.residual = float(np.sqrt(np.mean((model(w) / (w @ cone.center) - vals) ** 2)))
    return model


# -- envelope of exponents of positive functionals --------------------------------


@dataclass
class TangentEnvelope:
    """psi(w) <= delta_u <u, w> for every functional u positive on the cone,
    where delta_u is the exponential growth rate of #{u(mu) < T}.  The
    minimum over a finite family is a concave upper model of psi."""

    functionals: np.ndarray
    deltas: np.ndarray

    def __post_init__(self):
        self.functionals = np.atleast_2d(np.asarray(self.functionals, dtype=float))
        self.deltas = np.asarray(self.deltas, dtype=float)
        if len(self.functionals) != len(self.deltas) or len(self.deltas) == 0:
            raise ConeError("envelope needs one exponent per functional")

    def _values(self, w: np.ndarray) -> np.ndarray:
        return (np.asarray(w, dtype=float) @ self.functionals.T) * self.deltas

    def __call__(self, w: np.ndarray) -> float | np.ndarray:
        vals = self._values(w).min(axis=-1)
        return float(vals) if np.ndim(vals) == 0 else vals

    def gradient(self, w: np.ndarray) -> np.ndarray:
        j = int(np.argmin(self._values(w)))
        return self.deltas[j] * self.functionals[j]

    def active(self, w: np.ndarray) -> int:
        return int(np.argmin(self._values(w)))


def tangent_envelope(
    sample: SpectrumSample,
    cone: SliceCone,
    space: ChamberSpace,
    extra: Sequence[np.ndarray] = (),
    points_per_axis: int | None = None,
) -> TangentEnvelope:
    """Exponents of unit functionals taken from a grid over ``cone`` (and its
    extreme rays), plus the ``extra`` functionals, on an element sample.

    Functionals that are not nonnegative on the simple roots of every block
    have no completeness horizon and are skipped."""
    if sample.kind != "elements":
        raise ConeError("the growth indicator is estimated from Cartan projections of elements")
    m = cone.slice_dim
    if points_per_axis is None:
        points_per_axis = 41 if m <= 1 else 9
    z = _slice_grid(cone, 1.0, points_per_axis) if m else np.zeros((1, 0))
    candidates = [cone.center + z @ cone.frame, cone.rays]
    family = []
    for u in np.vstack(candidates):
        u = space.project(u)
        family.append(u / np.linalg.norm(u))
    family += [np.asarray(u, dtype=float) for u in extra]
    U, D = [], []
    for u in family:
        try:
            D.append(estimate_delta(sample, u))
        except ConeError as exc:
            log.debug("envelope functional skipped: %s", exc)
            continue
        U.append(u)
    if not U:
        raise ConeError("no functional in the family has a usable exponent")
    return TangentEnvelope(np.array(U), np.array(D))
