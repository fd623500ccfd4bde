"""Quadratic defect, truncation integrals and their limiting constants.

For a hypertube with direction ``v`` and tangent form ``psi_v`` the quantity

    L(T) = (kappa / |m|) * int_{t v + sqrt(t) u in trunc_T} exp(delta t - I(u)) dt du

(``u`` ranging over ``ker psi_v``) grows like ``c exp(delta T) / T^((d-1)/2)``.
Points are written ``x = t v + sqrt(t) v' + q`` with ``v'`` in ``ker phi`` and
``q`` in ``W``, so ``u = v' + q / sqrt(t)``.  After completing the square the
``v'`` integral is Gaussian (Gauss-Hermite); ``t`` and ``q`` use Gauss-Legendre
on the compact pieces where the offset ``b`` is affine.  Everything is carried
with a factor ``exp(-delta T)`` so large ``T`` does not overflow.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.special import erf
from scipy.spatial import ConvexHull, Delaunay, HalfspaceIntersection

from .cone import ChamberSpace, LinearMapPhi, SliceCone, cone_from_directions
from .critical import ConcaveModel, CriticalVectorProblem, CriticalVectorResult, solve_critical_vector
from .hypertube import BoxFamily, Hypertube, OffsetFunction, TruncationSpec, build_from_box_family

__all__ = [
    "DefectError",
    "IntegrationError",
    "DefectForm",
    "AsymptoticParams",
    "defect_I",
    "integral_L",
    "scaled_integral",
    "constant_c",
    "gaussian_factor",
    "q_factor",
    "ConvergenceRow",
    "ConvergenceReport",
    "ratio_convergence_check",
    "predict_counts",
    "PREDICTION_KINDS",
    "SyntheticInstance",
    "synthetic_instance",
    "with_cone",
]

# exp(-TAIL) is below double precision relative to the top of the t-range
TAIL = 40.0
LEGENDRE_NODES = 64
HERMITE_NODES = 32
PREDICTION_KINDS = ("jordan", "cartan", "correlation-jordan", "correlation-cartan")


class DefectError(ValueError):
    pass


class IntegrationError(RuntimeError):
    pass


@dataclass
class DefectForm:
    """``I(u) = <u,u> - <u,v>^2 / <v,v>`` for an inner product matrix on the
    ambient coordinates.  ``psi_v`` (optional) is used to check arguments."""

    inner_product: np.ndarray
    v: np.ndarray
    psi_v: np.ndarray | None = None
    tol: float = 1e-8

    def __post_init__(self):
        self.inner_product = np.asarray(self.inner_product, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        A = self.inner_product
        if A.shape != (len(self.v), len(self.v)):
            raise DefectError("inner product has the wrong shape")
        if not np.allclose(A, A.T, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise DefectError("inner product is not symmetric")
        if np.linalg.eigvalsh(A).min() <= 0:
            raise DefectError("inner product is not positive definite")
        if self.psi_v is not None:
            self.psi_v = np.asarray(self.psi_v, dtype=float)

    @classmethod
    def euclidean(cls, v: np.ndarray, psi_v: np.ndarray | None = None) -> "DefectForm":
        v = np.asarray(v, dtype=float)
        return cls(np.eye(len(v)), v, psi_v)

    @property
    def matrix(self) -> np.ndarray:
        """Symmetric matrix of I on the ambient coordinates (kernel = R v)."""
        Av = self.inner_product @ self.v
        return self.inner_product - np.outer(Av, Av) / (self.v @ Av)

    def restricted(self, basis: np.ndarray) -> np.ndarray:
        return basis.T @ self.matrix @ basis

    def __call__(self, u: np.ndarray) -> np.ndarray | float:
        u = np.asarray(u, dtype=float)
        M = self.matrix
        vals = np.einsum("...i,ij,...j->...", u, M, u)
        return float(vals) if np.ndim(vals) == 0 else vals


def defect_I(form: DefectForm, u: np.ndarray) -> float | np.ndarray:
    """Evaluate the defect, checking that ``u`` lies in ``ker psi_v``."""
    u = np.asarray(u, dtype=float)
    if form.psi_v is not None:
        scale = np.linalg.norm(form.psi_v) * np.maximum(1.0, np.linalg.norm(u, axis=-1))
        if np.any(np.abs(u @ form.psi_v) > form.tol * scale):
            raise DefectError("u is not in the kernel of the tangent form")
    return form(u)


@dataclass
class AsymptoticParams:
    delta_v: float
    kappa_v: float = 1.0
    m_X_norm: float = 1.0
    theta_fraction: float = 1.0

    def __post_init__(self):
        if not self.delta_v > 0:
            raise ValueError("delta_v must be positive")
        if not (self.kappa_v > 0 and self.m_X_norm > 0):
            raise ValueError("kappa_v and m_X_norm must be positive")
        if not 0 <= self.theta_fraction <= 1:
            raise ValueError("theta_fraction must lie in [0, 1]")

    @property
    def prefactor(self) -> float:
        return self.kappa_v / self.m_X_norm

    @property
    def c_prime(self) -> float:
        return 1.0 / self.m_X_norm


# --------------------------------------------------------------------------
# Geometry of Q: cells on which the offset is affine


def _chebyshev_center(A: np.ndarray, b: np.ndarray):
    """Centre and radius of the largest ball in {A x + b <= 0}."""
    norms = np.linalg.norm(A, axis=1)
    p = A.shape[1]
    res = linprog(
        np.r_[np.zeros(p), -1.0],
        A_ub=np.column_stack([A, norms]),
        b_ub=-b,
        bounds=[(None, None)] * p + [(0, None)],
        method="highs",
    )
    if res.status != 0:
        return None, 0.0
    return res.x[:p], res.x[-1]


def _affine_cells(h: Hypertube, b: OffsetFunction) -> list[np.ndarray]:
    """Simplices (rows = vertices, in W coordinates) tiling Q, with ``b``
    affine on each."""
    p = h.w_dim
    if p == 0:
        return [np.zeros((1, 0))]
    sign = 1.0 if b.mode == "min" else -1.0
    if p == 1:
        lo, hi = float(h.q_vertices.min()), float(h.q_vertices.max())
        cuts = [lo, hi]
        S, c = b.slopes[:, 0], b.intercepts
        for i, j in itertools.combinations(range(len(c)), 2):
            if S[i] != S[j]:
                x = (c[j] - c[i]) / (S[i] - S[j])
                if lo < x < hi:
                    cuts.append(x)
        cuts = np.unique(cuts)
        return [np.array([[a], [z]]) for a, z in zip(cuts[:-1], cuts[1:]) if z > a]
    cells = []
    size = np.ptp(h.q_vertices, axis=0).max()
    for j in range(len(b.intercepts)):
        # piece j is active where sign * (piece_j - piece_i) <= 0 for all i
        A = np.vstack([h.q_A, sign * (b.slopes[j] - b.slopes)])
        rhs = np.r_[h.q_b, sign * (b.intercepts[j] - b.intercepts)]
        keep = np.linalg.norm(A, axis=1) > 0
        if np.any(rhs[~keep] > 0):
            continue
        A, rhs = A[keep], rhs[keep]
        centre, radius = _chebyshev_center(A, rhs)
        if centre is None or radius <= 1e-12 * max(size, 1e-300):
            continue
        verts = HalfspaceIntersection(np.column_stack([A, rhs]), centre).intersections
        verts = verts[ConvexHull(verts).vertices]
        cells.extend(verts[s] for s in Delaunay(verts).simplices)
    return cells


def _simplex_rule(cell: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed tensor Gauss-Legendre rule on a simplex."""
    p = cell.shape[1]
    if p == 0:
        return np.zeros((1, 0)), np.ones(1)
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1), 0.5 * w
    grids = np.meshgrid(*([x] * p), indexing="ij")
    wgrids = np.meshgrid(*([w] * p), indexing="ij")
    u = np.stack([g.ravel() for g in grids], axis=1)
    weight = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    bary = np.empty_like(u)
    rest = np.ones(len(u))
    for i in range(p):
        bary[:, i] = rest * u[:, i]
        weight *= (1 - u[:, i]) ** (p - 1 - i)
        rest = rest * (1 - u[:, i])
    edges = cell[1:] - cell[0]
    volume = abs(np.linalg.det(edges))
    return cell[0] + bary @ edges, weight * volume


def _q_rule(cells: list[np.ndarray], n: int) -> tuple[np.ndarray, np.ndarray]:
    rules = [_simplex_rule(c, n) for c in cells]
    return np.concatenate([r[0] for r in rules]), np.concatenate([r[1] for r in rules])


def _cell_volumes(cells: list[np.ndarray]) -> np.ndarray:
    if cells[0].shape[1] == 0:
        return np.ones(1)
    return np.array([abs(np.linalg.det(c[1:] - c[0])) / math.factorial(c.shape[1]) for c in cells])


# --------------------------------------------------------------------------
# Gaussian part


@dataclass
class _Gaussian:
    """Completed square of ``I(v' + y)`` over ``v'`` in ker phi, for
    ``y`` in W: ``I = (a - a0)^T P (a - a0) + y^T S y`` with ``a0 = -G y``."""

    P: np.ndarray
    G: np.ndarray
    S: np.ndarray
    root: np.ndarray  # P^(-1/2)
    log_det: float

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    @property
    def mass(self) -> float:
        """int exp(-a^T P a) da"""
        return math.exp(0.5 * self.dim * math.log(math.pi) - 0.5 * self.log_det)


def _gaussian(h: Hypertube, form: DefectForm) -> _Gaussian:
    K, W = h.kernel.reshape(len(h.v), -1), h.w_basis
    M = form.matrix
    P = K.T @ M @ K
    X = K.T @ M @ W
    Y = W.T @ M @ W
    if P.size:
        evals, evecs = np.linalg.eigh(P)
        if evals.min() <= 1e-12 * max(1.0, np.abs(evals).max()):
            raise DefectError("defect form is degenerate on ker phi")
        G = np.linalg.solve(P, X)
        root = evecs @ np.diag(evals**-0.5) @ evecs.T
        log_det = float(np.log(evals).sum())
    else:
        G, root, log_det = np.zeros((0, W.shape[1])), np.zeros((0, 0)), 0.0
    S = Y - X.T @ G
    if S.size and np.linalg.eigvalsh(S).min() <= 0:
        raise DefectError("defect form is degenerate on W")
    return _Gaussian(P, G, S, root, log_det)


def gaussian_factor(h: Hypertube, form: DefectForm) -> float:
    """Closed form of the integral of exp(-I) over ker phi (1 if trivial)."""
    return _gaussian(h, form).mass


def _hermite(m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    if m == 0:
        return np.zeros((1, 0)), np.ones(1)
    x, w = np.polynomial.hermite.hermgauss(n)
    z = np.array(list(itertools.product(x, repeat=m)))
    wz = np.prod(np.array(list(itertools.product(w, repeat=m))), axis=1)
    return z, wz


# --------------------------------------------------------------------------
# The truncation integral


def _t_rule(tmax: np.ndarray, delta: float, T: float, n: int):
    """Nodes ``t`` (Nq, n) and weights containing ``exp(delta (t - T)) dt``."""
    x, w = np.polynomial.legendre.leggauss(n)
    tail = TAIL / delta
    far = tmax > tail
    t = np.empty((len(tmax), n))
    wt = np.empty_like(t)
    # exponential substitution s = exp(delta (t - tmax)) on [exp(-TAIL), 1]
    lo = math.exp(-TAIL)
    s = lo + (1 - lo) * 0.5 * (x + 1)
    tf = tmax[far, None] + np.log(s)[None] / delta
    t[far] = tf
    wt[far] = (0.5 * (1 - lo) * w)[None] * np.exp(delta * (tmax[far, None] - T)) / delta
    # t = sigma^2 on [0, tmax]; removes the t^(-1/2) singularity at 0
    near = ~far
    sig = np.sqrt(np.maximum(tmax[near], 0))[:, None] * 0.5 * (x + 1)[None]
    t[near] = sig**2
    wt[near] = np.sqrt(np.maximum(tmax[near], 0))[:, None] * 0.5 * w[None] * 2 * sig * np.exp(delta * (sig**2 - T))
    return t, wt


@dataclass
class _Parts:
    total: float
    A: float
    B: float
    C: float


def _hull_with_origin(h: Hypertube):
    if h.w_dim == 0:
        return lambda w: np.ones(len(w), dtype=bool)
    pts = np.vstack([h.q_vertices, np.zeros((1, h.w_dim))])
    if h.w_dim == 1:
        lo, hi = pts.min(), pts.max()
        return lambda w: (w[:, 0] >= lo) & (w[:, 0] <= hi)
    hull = ConvexHull(pts)
    return lambda w: np.all(w @ hull.equations[:, :-1].T + hull.equations[:, -1] <= 1e-12, axis=1)


def _cone_mass(h: Hypertube, gauss: _Gaussian, x0: np.ndarray, rt: np.ndarray, n_gh: int) -> np.ndarray:
    """int over whitened z in R^m of exp(-|z|^2) [x0 + rt K root z in C].

    Gauss-Hermite in the first m - 1 coordinates, exact (erf) along the last,
    where the cone cuts an interval.  ``x0`` has shape (..., n), ``rt`` (...).
    """
    G = h.cone.inequalities()
    c_base = x0 @ G.T  # (..., k)
    m = gauss.dim
    if m == 0:
        return np.all(c_base <= 0, axis=-1).astype(float)
    K = h.kernel.reshape(len(h.v), -1)
    z, wz = _hermite(m - 1, n_gh)
    outer = (z @ gauss.root[:, : m - 1].T) @ K.T @ G.T  # (Ng, k)
    last = G @ K @ gauss.root[:, m - 1]  # (k,)
    c0 = c_base[..., None, :] + rt[..., None, None] * outer  # (..., Ng, k)
    alpha = rt[..., None, None] * last
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = -c0 / alpha
    hi = np.where(alpha > 0, bound, np.inf).min(axis=-1)
    lo = np.where(alpha < 0, bound, -np.inf).max(axis=-1)
    flat_ok = np.all(np.where(alpha == 0, c0 <= 0, True), axis=-1)
    mass = 0.5 * math.sqrt(math.pi) * np.clip(erf(hi) - erf(lo), 0.0, None) * flat_ok
    return mass @ wz


def _quadrature(h, spec, params, form, n, n_gh, chunk=8192) -> _Parts:
    delta, T, d = params.delta_v, spec.T, h.w_dim + 1
    gauss = _gaussian(h, form)
    cells = _affine_cells(h, spec.b)
    qn, qw = _q_rule(cells, n)
    scale = math.exp(-0.5 * gauss.log_det)
    in_hull = _hull_with_origin(h)
    A = B = C = 0.0
    K = h.kernel.reshape(len(h.v), -1)
    tmax_all = T + spec.b(qn) if h.w_dim else np.full(len(qn), T + spec.b(np.zeros((1, 0)))[0])
    step = max(1, chunk // (n * max(1, n_gh ** max(gauss.dim - 1, 0))))
    for start in range(0, len(qn), step):
        sl = slice(start, start + step)
        q, wq, tmax = qn[sl], qw[sl], tmax_all[sl]
        ok = tmax > 0
        if not ok.any():
            continue
        q, wq, tmax = q[ok], wq[ok], tmax[ok]
        t, wt = _t_rule(tmax, delta, T, n)  # (nq, nt)
        nq, nt = t.shape
        rt = np.sqrt(t)
        y = q[:, None, :] / rt[..., None]  # (nq, nt, p)
        quad = np.einsum("abi,ij,abj->ab", y, gauss.S, y) if h.w_dim else np.zeros((nq, nt))
        base = np.exp(-quad) * t ** (-(d - 1) / 2) * wt * wq[:, None]
        a0 = -np.einsum("ij,abj->abi", gauss.G, y)  # (nq, nt, m)
        x0 = t[..., None] * h.v + rt[..., None] * (a0 @ K.T) + (q @ h.w_basis.T)[:, None, :]
        vals = base * _cone_mass(h, gauss, x0, rt, n_gh) * scale
        if h.w_dim:
            wflat = (q[:, None, :] * np.sqrt(T / t)[..., None]).reshape(-1, h.w_dim)
            in_a = h.in_q(wflat).reshape(nq, nt)
            in_b = in_hull(wflat).reshape(nq, nt) & ~in_a
        else:
            in_a, in_b = np.ones((nq, nt), dtype=bool), np.zeros((nq, nt), dtype=bool)
        A += vals[in_a].sum()
        B += vals[in_b].sum()
        C += vals[~in_a & ~in_b].sum()
    return _Parts(A + B + C, A, B, C)


def _sample_q(cells: list[np.ndarray], n: int, rng) -> tuple[np.ndarray, float]:
    vols = _cell_volumes(cells)
    p = cells[0].shape[1]
    if p == 0:
        return np.zeros((n, 0)), 1.0
    which = rng.choice(len(cells), size=n, p=vols / vols.sum())
    bary = rng.dirichlet(np.ones(p + 1), size=n)
    stack = np.stack(cells)  # (ncell, p+1, p)
    return np.einsum("nk,nkj->nj", bary, stack[which]), float(vols.sum())


def _montecarlo(h, spec, params, form, samples, seed, block=200_000) -> tuple[float, float]:
    """Mean and standard error of the scaled integral (exp(-delta T) L / prefactor)."""
    delta, T, d = params.delta_v, spec.T, h.w_dim + 1
    gauss = _gaussian(h, form)
    cells = _affine_cells(h, spec.b)
    K = h.kernel.reshape(len(h.v), -1)
    rng = np.random.default_rng(seed)
    total, total_sq, done = 0.0, 0.0, 0
    while done < samples:
        n = min(block, samples - done)
        q, vol = _sample_q(cells, n, rng)
        bq = spec.b(q) if h.w_dim else np.full(n, spec.b(np.zeros((1, 0)))[0])
        t = T + bq - rng.exponential(1 / delta, size=n)
        pos = t > 0
        tt = np.where(pos, t, 1.0)
        y = q / np.sqrt(tt)[:, None]
        quad = np.einsum("ni,ij,nj->n", y, gauss.S, y) if h.w_dim else np.zeros(n)
        a = -(y @ gauss.G.T) + (rng.normal(size=(n, gauss.dim)) / math.sqrt(2)) @ gauss.root.T
        x = tt[:, None] * h.v + np.sqrt(tt)[:, None] * (a @ K.T) + q @ h.w_basis.T
        inside = h.cone.contains(x)
        f = vol * np.exp(delta * bq) / delta * tt ** (-(d - 1) / 2) * np.exp(-quad) * gauss.mass
        f = np.where(pos & inside, f, 0.0)
        total += f.sum()
        total_sq += (f**2).sum()
        done += n
    mean = total / samples
    var = max(total_sq / samples - mean**2, 0.0)
    return mean, math.sqrt(var / samples)


def scaled_integral(
    h: Hypertube,
    spec: TruncationSpec,
    params: AsymptoticParams,
    form: DefectForm,
    method: str = "quadrature",
    budget: int | None = None,
    seed: int = 0,
) -> float:
    """``exp(-delta T) L(T)``."""
    if method == "quadrature":
        n = budget or LEGENDRE_NODES
        if n <= 0:
            raise ValueError("budget must be positive")
        return params.prefactor * _quadrature(h, spec, params, form, n, max(8, n // 2)).total
    if method == "montecarlo":
        n = budget or 400_000
        if n <= 0:
            raise ValueError("budget must be positive")
        return params.prefactor * _montecarlo(h, spec, params, form, n, seed)[0]
    raise ValueError(f"unknown method {method!r}")


def integral_L(
    h: Hypertube,
    spec: TruncationSpec,
    params: AsymptoticParams,
    form: DefectForm,
    method: str = "quadrature",
    budget: int | None = None,
    seed: int = 0,
    rtol: float = 0.01,
    max_samples: int = 6_400_000,
) -> float:
    """Numerical value of the truncation integral.

    ``method="both"`` computes the quadrature value and confirms it with
    Monte Carlo, doubling the sample count (from ``budget``) until the two
    agree within ``rtol``; ``IntegrationError`` if ``max_samples`` is reached.
    """
    if method == "both":
        quad = scaled_integral(h, spec, params, form, "quadrature")
        n = budget or 200_000
        while True:
            mc, se = _montecarlo(h, spec, params, form, n, seed)
            mc *= params.prefactor
            se *= params.prefactor
            if abs(mc - quad) <= rtol * abs(quad) and se <= rtol * abs(quad):
                break
            if 2 * n > max_samples:
                raise IntegrationError(
                    f"quadrature {quad:.6g} and Monte Carlo {mc:.6g} (se {se:.2g}) disagree after {n} samples"
                )
            n *= 2
        value = quad
    else:
        value = scaled_integral(h, spec, params, form, method, budget, seed)
    return value * math.exp(params.delta_v * spec.T) if value else 0.0


# --------------------------------------------------------------------------
# Limiting constant


def q_factor(h: Hypertube, b: OffsetFunction, delta: float, nodes: int = LEGENDRE_NODES) -> float:
    """int_Q exp(delta b(q)) dq, exact for one-dimensional Q."""
    if h.w_dim == 0:
        return float(math.exp(delta * b(np.zeros((1, 0)))[0]))
    cells = _affine_cells(h, b)
    if h.w_dim == 1:
        total = 0.0
        for cell in cells:
            lo, hi = cell[0, 0], cell[1, 0]
            mid = np.array([[0.5 * (lo + hi)]])
            j = int(np.argmin(b.slopes @ mid[0] + b.intercepts) if b.mode == "min" else np.argmax(
                b.slopes @ mid[0] + b.intercepts
            ))
            slope = delta * b.slopes[j, 0]
            start = delta * (b.slopes[j, 0] * lo + b.intercepts[j])
            width = hi - lo
            # int_0^width exp(start + slope s) ds
            total += math.exp(start) * (width if slope == 0 else math.expm1(slope * width) / slope)
        return total
    qn, qw = _q_rule(cells, nodes)
    return float(qw @ np.exp(delta * b(qn)))


def constant_c(h: Hypertube, b: OffsetFunction, params: AsymptoticParams, form: DefectForm) -> float:
    """Limit of ``L(T) T^((d-1)/2) exp(-delta T)``."""
    gauss = gaussian_factor(h, form)
    return params.prefactor / params.delta_v * gauss * q_factor(h, b, params.delta_v)


# --------------------------------------------------------------------------
# Convergence of L(T) T^((d-1)/2) exp(-delta T) / c


@dataclass
class ConvergenceRow:
    T: float
    L: float
    ratio: float
    A: float
    B: float
    C: float

    @property
    def deviation(self) -> float:
        return abs(self.ratio - 1.0)


@dataclass
class ConvergenceReport:
    c: float
    d: int
    rows: list[ConvergenceRow] = field(default_factory=list)

    @property
    def final_deviation(self) -> float:
        return self.rows[-1].deviation

    @property
    def T(self) -> np.ndarray:
        return np.array([r.T for r in self.rows])

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.rows])

    def tail_decreasing(self, tail: int = 4, slack: float = 1e-3) -> bool:
        dev = np.array([r.deviation for r in self.rows[-tail:]])
        return bool(np.all(np.diff(dev) <= slack))

    def to_text(self) -> str:
        lines = [f"c: {self.c:.12g}", f"d: {self.d}", "T ratio deviation A B C"]
        for r in self.rows:
            lines.append(f"{r.T:g} {r.ratio:.8f} {r.deviation:.3e} {r.A:.6g} {r.B:.6g} {r.C:.6g}")
        lines.append(f"final_deviation: {self.final_deviation:.3e}")
        return "\n".join(lines)


def ratio_convergence_check(
    h: Hypertube,
    spec: TruncationSpec,
    T_grid: Sequence[float],
    params: AsymptoticParams,
    form: DefectForm,
    budget: int | None = None,
) -> ConvergenceReport:
    """Ratio of the truncation integral to its predicted asymptotic along a
    grid, with the split into the part where ``sqrt(T) y`` lies in Q (A),
    in ``hull(Q, 0) - Q`` (B) and outside (C), in units of the ratio times c."""
    T_grid = np.asarray(T_grid, dtype=float)
    if np.any(np.diff(T_grid) <= 0):
        raise ValueError("T grid must be increasing")
    d = h.w_dim + 1
    c = constant_c(h, spec.b, params, form)
    n = budget or LEGENDRE_NODES
    report = ConvergenceReport(c, d)
    for T in T_grid:
        parts = _quadrature(h, spec.at(float(T)), params, form, n, max(8, n // 2))
        norm = params.prefactor * T ** ((d - 1) / 2)
        scaled = params.prefactor * parts.total
        with np.errstate(over="ignore"):
            L = scaled * math.exp(min(params.delta_v * T, 709.0)) if params.delta_v * T < 709 else math.inf
        report.rows.append(
            ConvergenceRow(float(T), L, scaled * T ** ((d - 1) / 2) / c, parts.A * norm, parts.B * norm, parts.C * norm)
        )
    return report


def with_cone(h: Hypertube, cone) -> Hypertube:
    """Same hypertube cut by another cone."""
    return dataclasses.replace(h, cone=cone)


# --------------------------------------------------------------------------
# Counting predictions


def predict_counts(
    kind: str,
    params: AsymptoticParams,
    T: float | np.ndarray,
    d: int,
    c: float | None = None,
    c_b1: float | None = None,
    c_b2: float | None = None,
) -> float | np.ndarray:
    """Closed-form count asymptotics.

    jordan:              c |m| theta exp(delta T) / T^((d+1)/2)
    cartan:              c exp(delta T) / T^((d-1)/2)
    correlation-jordan:  the jordan form with c = c_b1 - c_b2
    correlation-cartan:  c' |m| (c_b1 - c_b2) exp(delta T) / T^((d-1)/2), c' = 1/|m|
    """
    if kind not in PREDICTION_KINDS:
        raise ValueError(f"kind must be one of {PREDICTION_KINDS}")
    if kind.startswith("correlation"):
        if c_b1 is None or c_b2 is None:
            raise ValueError("correlation predictions need c_b1 and c_b2")
        c = c_b1 - c_b2
    elif c is None:
        raise ValueError("prediction needs c")
    T = np.asarray(T, dtype=float)
    growth = np.exp(params.delta_v * T)
    if kind in ("jordan", "correlation-jordan"):
        out = c * params.m_X_norm * params.theta_fraction * growth / T ** ((d + 1) / 2)
    elif kind == "cartan":
        out = c * growth / T ** ((d - 1) / 2)
    else:
        out = params.c_prime * params.m_X_norm * c * growth / T ** ((d - 1) / 2)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# A rank-3 instance with a one-dimensional kernel, used as a reference


def _geometric_mean_model() -> ConcaveModel:
    def f(w):
        return 3.0 * np.cbrt(max(w[0] * w[1] * w[2], 0.0))

    def g(w):
        return np.cbrt(w[0] * w[1] * w[2]) / np.asarray(w, dtype=float)

    return ConcaveModel(f, g, "geometric-mean")


@dataclass
class SyntheticInstance:
    """psi(w) = 3 (w1 w2 w3)^(1/3) on R^3, phi = (w1 + w2, w2 + w3),
    r = (1, 1.2), box sides (0.3, 0.2)."""

    space: ChamberSpace
    phi: LinearMapPhi
    r: np.ndarray
    eps: np.ndarray
    limit_cone: SliceCone
    critical: CriticalVectorResult
    family: BoxFamily
    hypertube: Hypertube
    b1: OffsetFunction
    b2: OffsetFunction
    params: AsymptoticParams
    form: DefectForm

    @property
    def d(self) -> int:
        return self.phi.d

    def spec(self, T: float = 0.0, which: str = "b1") -> TruncationSpec:
        return TruncationSpec(self.hypertube.v, getattr(self, which), T)

    def working_cone(self, dilation: float) -> SliceCone:
        return self.limit_cone.dilated(dilation).intersected(-self.space.roots)


def synthetic_instance(dilation: float = 0.05) -> SyntheticInstance:
    space = ChamberSpace.euclidean(3)
    limit_cone = cone_from_directions(np.eye(3) + 0.2)
    phi = LinearMapPhi([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
    r, eps = np.array([1.0, 1.2]), np.array([0.3, 0.2])
    crit = solve_critical_vector(CriticalVectorProblem(_geometric_mean_model(), phi, r, limit_cone, space))
    cone = limit_cone.dilated(dilation).intersected(-space.roots)
    family = BoxFamily(phi, r, eps)
    h, b1, b2 = build_from_box_family(family, crit.v_star, crit.tangent, cone, space)
    params = AsymptoticParams(crit.value)
    form = DefectForm.euclidean(h.v, h.psi_v)
    return SyntheticInstance(space, phi, r, eps, limit_cone, crit, family, h, b1, b2, params, form)
