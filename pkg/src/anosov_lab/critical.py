"""Maximising a concave homogeneous function over an affine slice of a cone.

Given ``psi`` (degree-1 homogeneous and concave on a cone), a surjective
linear map ``phi`` and a target ``r``, find the maximiser ``v*`` of ``psi`` on
``{w : phi(w) = r}`` inside the cone.  At ``v*`` the gradient of ``psi``
vanishes on ``ker phi``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .cone import (
    ChamberSpace,
    ConeError,
    LimitConeEstimate,
    LinearFunctional,
    LinearMapPhi,
    SliceCone,
    estimate_tangent_form,
)

__all__ = [
    "CriticalVectorError",
    "ConcaveModel",
    "sqrt_product_model",
    "linear_model",
    "CriticalVectorProblem",
    "CriticalVectorResult",
    "solve_critical_vector",
    "verify_kernel_inclusion",
    "kernel_residual",
    "sup_value_bound_check",
]

log = logging.getLogger(__name__)


class CriticalVectorError(RuntimeError):
    pass


@dataclass
class ConcaveModel:
    """A degree-1 homogeneous function with an optional analytic gradient."""

    evaluator: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "model"

    def __call__(self, w: np.ndarray) -> float:
        return float(self.evaluator(np.asarray(w, dtype=float)))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        if self.grad is None:
            raise AttributeError("no analytic gradient")
        return np.asarray(self.grad(np.asarray(w, dtype=float)), dtype=float)

    def has_gradient(self) -> bool:
        return self.grad is not None

    @classmethod
    def wrap(cls, f) -> "ConcaveModel":
        if isinstance(f, ConcaveModel):
            return f
        grad = getattr(f, "gradient", None)
        return cls(f, grad, type(f).__name__)


def sqrt_product_model(scale: float = 2.0) -> ConcaveModel:
    """psi(w1, w2) = scale * sqrt(w1 * w2) on the open positive quadrant."""

    def f(w):
        return scale * np.sqrt(max(w[0] * w[1], 0.0))

    def g(w):
        root = np.sqrt(w[0] * w[1])
        return 0.5 * scale * np.array([w[1] / root, w[0] / root])

    return ConcaveModel(f, g, "sqrt-product")


def linear_model(a: Sequence[float]) -> ConcaveModel:
    a = np.asarray(a, dtype=float)
    return ConcaveModel(lambda w: float(w @ a), lambda w: a.copy(), "linear")


@dataclass
class CriticalVectorProblem:
    psi: ConcaveModel | Callable
    phi: LinearMapPhi
    r: np.ndarray
    cone: SliceCone | LimitConeEstimate
    space: ChamberSpace

    def __post_init__(self):
        self.psi = ConcaveModel.wrap(self.psi)
        self.r = np.atleast_1d(np.asarray(self.r, dtype=float))
        if isinstance(self.cone, LimitConeEstimate):
            self.cone = self.cone.hull
        if self.r.shape != (self.phi.d,):
            raise ValueError(f"r must have {self.phi.d} entries")


@dataclass
class CriticalVectorResult:
    v_star: np.ndarray
    value: float
    tangent: LinearFunctional
    kernel_residual: float
    iterations: int = 0
    seed_spread: float = 0.0
    boundary_active: bool = False
    seeds: list[np.ndarray] = field(default_factory=list, repr=False)

    def to_text(self) -> str:
        fmt = lambda xs: " ".join(f"{x:.12g}" for x in xs)  # noqa: E731
        return "\n".join(
            [
                f"v_star: {fmt(self.v_star)}",
                f"delta: {self.value:.12g}",
                f"tangent: {fmt(self.tangent.coefficients)}",
                f"kernel_residual: {self.kernel_residual:.3e}",
                f"seed_spread: {self.seed_spread:.3e}",
                f"boundary_active: {self.boundary_active}",
            ]
        )


def _gradient(psi: ConcaveModel, w: np.ndarray, space: ChamberSpace) -> np.ndarray:
    if psi.has_gradient():
        return space.project(psi.gradient(w))
    return estimate_tangent_form(psi, w, space).vector


def kernel_residual(tangent: np.ndarray, kernel: np.ndarray) -> float:
    """max_j |tangent . u_j| / |tangent| over orthonormal kernel columns."""
    if kernel.shape[1] == 0:
        return 0.0
    norm = np.linalg.norm(tangent)
    if norm == 0:
        return np.inf
    return float(np.max(np.abs(tangent @ kernel)) / norm)


def _slice_lp(problem: CriticalVectorProblem, objective: np.ndarray | None = None):
    """Feasible point of {phi(w) = r} in the cone as a positive combination of
    the extreme rays.  Without an objective, maximises the smallest weight
    (a well-centred point); otherwise maximises ``objective . w``."""
    rays = problem.cone.rays
    img = problem.phi(rays)  # (m, d)
    m = len(rays)
    if objective is None:
        c = np.r_[np.zeros(m), -1.0]
        A_ub = np.column_stack([-np.eye(m), np.ones(m)])
        res = linprog(
            c,
            A_ub=A_ub,
            b_ub=np.zeros(m),
            A_eq=np.column_stack([img.T, np.zeros(problem.phi.d)]),
            b_eq=problem.r,
            bounds=[(0, None)] * m + [(None, None)],
            method="highs",
        )
        if res.status != 0:
            raise CriticalVectorError("r is outside the image of the cone")
        return res.x[:m] @ rays, res.x[-1]
    res = linprog(-(rays @ objective), A_eq=img.T, b_eq=problem.r, bounds=[(0, None)] * m, method="highs")
    if res.status != 0:
        raise CriticalVectorError("slice of the cone is unbounded or empty")
    return res.x @ rays, None


def _check_interior(problem: CriticalVectorProblem) -> np.ndarray:
    img = problem.phi(problem.cone.rays)
    if np.linalg.matrix_rank(img, tol=1e-10) < problem.phi.d:
        raise CriticalVectorError("phi(cone) has empty interior")
    point, margin = _slice_lp(problem)
    scale = np.linalg.norm(problem.r) / max(np.linalg.norm(img, axis=1).max(), 1e-300)
    if margin <= 1e-9 * max(scale, 1e-300):
        raise CriticalVectorError("r is not in the interior of phi(cone)")
    return point


def _inside(cone: SliceCone, w: np.ndarray, margin: float) -> bool:
    return bool(cone.margins(w[None])[0] > margin)


def _ascend(problem, base, kernel, z, tol, max_iter, margin):
    psi, space, cone = problem.psi, problem.space, problem.cone
    w = base + kernel @ z
    val = psi(w)
    step = 1.0
    prev = None
    hit_boundary = False
    for it in range(1, max_iter + 1):
        grad = _gradient(psi, w, space)
        g = kernel.T @ grad
        if np.linalg.norm(g) <= tol * np.linalg.norm(grad):
            return z, w, val, it, hit_boundary
        if prev is not None:
            dz, dg = z - prev[0], g - prev[1]
            curv = -(dz @ dg)
            if curv > 0:
                step = (dz @ dz) / curv
        prev = (z.copy(), g.copy())
        t = step
        for _ in range(80):
            z_new = z + t * g
            w_new = base + kernel @ z_new
            if not _inside(cone, w_new, margin):
                hit_boundary = True
                t *= 0.5
                continue
            v_new = psi(w_new)
            if v_new >= val + 1e-4 * t * (g @ g):
                break
            t *= 0.5
        else:
            # no ascent possible at machine precision
            return z, w, val, it, hit_boundary
        z, w, val = z_new, w_new, v_new
        step = t
    raise CriticalVectorError(f"no convergence within {max_iter} iterations")


def solve_critical_vector(
    problem: CriticalVectorProblem,
    tol: float = 1e-8,
    max_iter: int = 2000,
    n_seeds: int = 5,
    seed: int = 0,
    boundary_margin: float = 1e-9,
) -> CriticalVectorResult:
    """Projected gradient ascent of psi along ker phi with multistart."""
    phi, space, psi = problem.phi, problem.space, problem.psi
    centre = _check_interior(problem)
    kernel = phi.kernel_basis(space)
    if kernel.shape[1] == 0:
        v = phi.preimage(problem.r, space)
        tangent = _gradient(psi, v, space)
        return CriticalVectorResult(v, psi(v), LinearFunctional(tuple(tangent)), 0.0, 0, 0.0, False, [v])

    base = phi.preimage(problem.r, space)
    seeds = [centre]
    min_norm = base
    blend = 1.0
    while not _inside(problem.cone, centre + blend * (min_norm - centre), boundary_margin) and blend > 1e-6:
        blend *= 0.5
    seeds[0] = centre + 0.5 * blend * (min_norm - centre)
    rng = np.random.default_rng(seed)
    while len(seeds) < n_seeds:
        direction = kernel @ rng.normal(size=kernel.shape[1])
        far, _ = _slice_lp(problem, direction)
        seeds.append(centre + 0.5 * (far - centre))

    runs = []
    for s in seeds:
        z0 = kernel.T @ (s - base)
        z, w, val, it, hit = _ascend(problem, base, kernel, z0, tol, max_iter, boundary_margin)
        runs.append((val, tuple(w), w, it, hit))
    runs.sort(key=lambda r: (-r[0], r[1]))
    best_val, _, v, iters, _ = runs[0]
    spread = max(np.linalg.norm(r[2] - v) for r in runs)
    if spread > 10 * tol * max(1.0, np.linalg.norm(v)) and spread > 1e-9:
        raise CriticalVectorError(f"multistart disagreement {spread:.3e}: model is not strictly concave enough")
    tangent = _gradient(psi, v, space)
    boundary = problem.cone.margins(v[None])[0] < 10 * boundary_margin + 1e-6
    if boundary:
        log.warning("critical vector lies on the cone boundary")
    return CriticalVectorResult(
        v,
        float(best_val),
        LinearFunctional(tuple(tangent)),
        kernel_residual(tangent, kernel),
        iters,
        float(spread),
        bool(boundary),
        seeds,
    )


def verify_kernel_inclusion(
    result: CriticalVectorResult, phi: LinearMapPhi, tol: float = 1e-6, space: ChamberSpace | None = None
) -> bool:
    kernel = phi.kernel_basis(space)
    t = result.tangent.vector
    scale = np.linalg.norm(t)
    return bool(np.all(np.abs(t @ kernel) <= tol * scale * np.linalg.norm(kernel, axis=0)))


def sup_value_bound_check(
    result: CriticalVectorResult | float,
    per_factor_deltas: Sequence[float],
    r: Sequence[float],
    slack: float = 0.05,
) -> dict:
    """Compare the slice maximum with min_i delta_i * r_i."""
    value = result.value if isinstance(result, CriticalVectorResult) else float(result)
    products = np.asarray(per_factor_deltas, dtype=float) * np.asarray(r, dtype=float)
    bound = float(products.min())
    return {
        "delta": value,
        "products": products.tolist(),
        "bound": bound,
        "satisfied": bool(value <= bound + slack),
        "margin": bound - value,
        "strict_expected": bool(np.ptp(products) <= slack),
    }
