"""Hypertubes ``(Q + V) ∩ C`` and their truncations along a direction ``v``.

Every trace-free vector splits uniquely as ``u = q + v' + t v`` with ``q`` in
a complement ``W`` of ``ker phi`` inside ``ker psi_v``, ``v'`` in ``ker phi`` and
``t = psi_v(u) / psi_v(v)``.  A truncation keeps the points of the hypertube
with ``0 <= t <= T + b(q)``.  Built from a box family, two offsets ``b1 >= b2``
describe the box ``phi^-1(rT + prod[0, eps])`` inside the cone as the
difference of two nested truncations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.spatial import ConvexHull

from .cone import ChamberSpace, LinearFunctional, LinearMapPhi, SliceCone

__all__ = [
    "HypertubeError",
    "BoxFamily",
    "OffsetFunction",
    "Hypertube",
    "TruncationSpec",
    "Decomposition",
    "build_from_box_family",
    "truncation_contains",
    "verify_difference_identity",
]

BOUNDARY_BAND = 1e-9


class HypertubeError(ValueError):
    pass


@dataclass
class BoxFamily:
    phi: LinearMapPhi
    r: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        self.r = np.atleast_1d(np.asarray(self.r, dtype=float))
        self.eps = np.atleast_1d(np.asarray(self.eps, dtype=float))
        if self.r.shape != (self.phi.d,) or self.eps.shape != (self.phi.d,):
            raise HypertubeError("r and eps need one entry per row of phi")
        if np.any(self.eps <= 0):
            raise HypertubeError("eps entries must be positive")

    def lower(self, T: float) -> np.ndarray:
        return self.r * T

    def contains(self, u: np.ndarray, T: float) -> np.ndarray:
        y = self.phi(np.atleast_2d(u))
        return np.all((y >= self.r * T) & (y <= self.r * T + self.eps), axis=1)

    def margin(self, u: np.ndarray, T: float) -> np.ndarray:
        """Distance of phi(u) to the nearest face of the box (per coordinate)."""
        y = self.phi(np.atleast_2d(u))
        lo = np.abs(y - self.r * T)
        hi = np.abs(y - self.r * T - self.eps)
        return np.minimum(lo, hi).min(axis=1)


@dataclass
class OffsetFunction:
    """Piecewise-linear offset on W coordinates:
    ``min_j (slopes_j . q + intercepts_j)`` or the same with ``max``."""

    slopes: np.ndarray
    intercepts: np.ndarray
    mode: str = "min"

    def __post_init__(self):
        self.intercepts = np.atleast_1d(np.asarray(self.intercepts, dtype=float))
        self.slopes = np.asarray(self.slopes, dtype=float).reshape(len(self.intercepts), -1)
        if self.mode not in ("min", "max"):
            raise ValueError("mode must be 'min' or 'max'")

    @classmethod
    def constant(cls, value: float, dim: int) -> "OffsetFunction":
        return cls(np.zeros((1, dim)), np.array([value]))

    def __call__(self, q: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(q)
        pieces = q @ self.slopes.T + self.intercepts
        return pieces.min(axis=1) if self.mode == "min" else pieces.max(axis=1)

    def shifted(self, s: float) -> "OffsetFunction":
        return OffsetFunction(self.slopes, self.intercepts + s, self.mode)

    def breakpoints(self, vertices: np.ndarray) -> np.ndarray:
        """Values at the given points (used to serialise the offset)."""
        return self(vertices)


@dataclass
class Decomposition:
    q: np.ndarray  # W coordinates
    v_part: np.ndarray  # component in ker phi (ambient)
    t: np.ndarray


@dataclass
class Hypertube:
    """``(Q + V) ∩ C`` with ``V = R v ⊕ ker phi`` and ``Q`` a polytope in ``W``.

    ``w_basis`` has orthonormal columns spanning ``W``; ``q_vertices`` and the
    facets ``q_A q + q_b <= 0`` are in those coordinates.
    """

    space: ChamberSpace
    v: np.ndarray
    psi_v: np.ndarray
    kernel: np.ndarray
    w_basis: np.ndarray
    q_vertices: np.ndarray
    q_A: np.ndarray
    q_b: np.ndarray
    cone: SliceCone
    v_basis: np.ndarray = field(init=False)

    def __post_init__(self):
        self.v_basis = np.column_stack([self.v, self.kernel]) if self.kernel.size else self.v[:, None]
        if not self.cone.contains(self.v[None])[0]:
            raise HypertubeError("direction v is not inside the cone C")
        if self.q_vertices.shape[1] and np.abs(self.q_vertices @ self.w_basis.T @ self.psi_v).max() > 1e-9 * max(
            1.0, np.linalg.norm(self.q_vertices)
        ):
            raise HypertubeError("Q is not inside ker psi_v")

    @property
    def w_dim(self) -> int:
        return self.w_basis.shape[1]

    def decompose(self, u: np.ndarray) -> Decomposition:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        t = (u @ self.psi_v) / (self.v @ self.psi_v)
        rest = u - np.outer(t, self.v)
        q = rest @ self.w_basis
        return Decomposition(q, rest - q @ self.w_basis.T, t)

    def reassemble(self, dec: Decomposition) -> np.ndarray:
        return dec.q @ self.w_basis.T + dec.v_part + np.outer(dec.t, self.v)

    def in_q(self, q: np.ndarray, tol: float = 0.0) -> np.ndarray:
        q = np.atleast_2d(q)
        if self.w_dim == 0:
            return np.ones(len(q), dtype=bool)
        return np.all(q @ self.q_A.T + self.q_b <= tol, axis=1)

    def q_margin(self, q: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(q)
        if self.w_dim == 0:
            return np.full(len(q), np.inf)
        return np.abs(q @ self.q_A.T + self.q_b).min(axis=1)

    def contains(self, u: np.ndarray, tol: float = 0.0) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        off_space = np.linalg.norm(u - self.space.project(u), axis=1)
        dec = self.decompose(u)
        return (off_space <= 1e-9 * np.maximum(1, np.linalg.norm(u, axis=1))) & self.cone.contains(u, tol) & self.in_q(
            dec.q, tol
        )

    def to_text(self) -> str:
        fmt = lambda xs: " ".join(f"{x:.12g}" for x in xs)  # noqa: E731
        lines = ["V_basis:"] + ["  " + fmt(col) for col in self.v_basis.T]
        lines += ["Q_vertices:"] + ["  " + fmt(q @ self.w_basis.T) for q in self.q_vertices]
        lines += [self.cone.to_text().replace("rays:", "C_rays:")]
        lines += [f"v: {fmt(self.v)}"]
        return "\n".join(lines)


@dataclass
class TruncationSpec:
    v: np.ndarray
    b: OffsetFunction
    T: float

    def __post_init__(self):
        if self.T < 0:
            raise HypertubeError("T must be nonnegative")

    def at(self, T: float) -> "TruncationSpec":
        return TruncationSpec(self.v, self.b, T)


def truncation_contains(h: Hypertube, spec: TruncationSpec, u: np.ndarray, tol: float = 0.0) -> np.ndarray:
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if not np.allclose(spec.v, h.v):
        raise HypertubeError("truncation direction differs from the hypertube's")
    dec = h.decompose(u)
    inside = h.cone.contains(u, tol) & h.in_q(dec.q, tol)
    return inside & (dec.t >= -tol) & (dec.t <= spec.T + spec.b(dec.q) + tol)


def build_from_box_family(
    family: BoxFamily,
    v_star: np.ndarray,
    psi_tangent: LinearFunctional | np.ndarray,
    cone: SliceCone,
    space: ChamberSpace,
    tol: float = 1e-6,
) -> tuple[Hypertube, OffsetFunction, OffsetFunction]:
    """Hypertube and offsets ``b1 >= b2`` such that, for every T,
    ``C ∩ phi^-1(rT + prod[0, eps])`` equals the points of the b1-truncation
    that are not in the b2-truncation (up to the face t = T + b2)."""
    phi = family.phi
    v = np.asarray(v_star, dtype=float)
    psi = psi_tangent.vector if isinstance(psi_tangent, LinearFunctional) else np.asarray(psi_tangent, dtype=float)
    psi = space.project(psi)
    if np.abs(phi(v) - family.r).max() > tol * max(1.0, np.abs(family.r).max()):
        raise HypertubeError("phi(v_star) differs from r")
    kernel = phi.kernel_basis(space)
    if kernel.size and np.abs(psi @ kernel).max() > tol * np.linalg.norm(psi):
        raise HypertubeError("psi_tangent does not vanish on ker phi")
    if psi @ v <= 0:
        raise HypertubeError("psi_tangent must be positive at v_star")
    if np.any(family.r <= 0):
        raise HypertubeError("r must have positive entries")

    # W = (ker phi)^perp ∩ ker psi inside the trace-free space
    coords_perp = null_space(np.vstack([kernel.T @ space.basis, psi @ space.basis])) if kernel.size else null_space(
        (psi @ space.basis)[None]
    )
    w_basis = space.basis @ coords_perp
    d = phi.d
    if w_basis.shape[1] != d - 1:
        raise HypertubeError("degenerate complement W")

    # parallelepiped B = {t v + w : phi in prod[0, eps]}; corners -> Q
    M = np.column_stack([phi(v), phi(w_basis.T).T]) if d > 1 else phi(v)[:, None]
    corners = np.array(list(itertools.product(*[(0.0, e) for e in family.eps])))
    sol = np.linalg.solve(M, corners.T).T  # (2^d, d): (t, q coords)
    q_corners = sol[:, 1:]
    if d == 1:
        q_vertices, q_A, q_b = np.zeros((1, 0)), np.zeros((0, 0)), np.zeros(0)
    elif d == 2:
        lo, hi = q_corners[:, 0].min(), q_corners[:, 0].max()
        q_vertices = np.array([[lo], [hi]])
        q_A, q_b = np.array([[1.0], [-1.0]]), np.array([-hi, lo])
    else:
        hull = ConvexHull(q_corners)
        q_vertices = q_corners[hull.vertices]
        q_A, q_b = hull.equations[:, :-1], hull.equations[:, -1]

    r = phi(v)
    phi_w = phi(w_basis.T).T if d > 1 else np.zeros((d, 0))  # (d, d-1)
    # t-interval for row i: [-phi_i(q)/r_i, (eps_i - phi_i(q))/r_i]
    b1 = OffsetFunction(-phi_w / r[:, None], family.eps / r, "min")
    b2 = OffsetFunction(-phi_w / r[:, None], np.zeros(d), "max")
    h = Hypertube(space, v, psi, kernel, w_basis, q_vertices, q_A, q_b, cone)
    return h, b1, b2


def _sample_neighbourhood(h: Hypertube, family: BoxFamily, b1, b2, T: float, n: int, rng) -> np.ndarray:
    """Points around the box slab: q in an enlarged copy of Q, t across the
    slab with margins, kernel components spread around the cone section."""
    if h.w_dim:
        lo, hi = h.q_vertices.min(axis=0), h.q_vertices.max(axis=0)
        span = np.maximum(hi - lo, 1e-3)
        q = rng.uniform(lo - 0.25 * span, hi + 0.25 * span, size=(n, h.w_dim))
    else:
        q = np.zeros((n, 0))
    t_lo = T + b2(h.q_vertices).min() if h.w_dim else T + b2(np.zeros((1, 0)))[0]
    t_hi = T + b1(h.q_vertices).max() if h.w_dim else T + b1(np.zeros((1, 0)))[0]
    pad = 0.25 * (t_hi - t_lo) + 1e-3
    t = rng.uniform(t_lo - pad, t_hi + pad, size=n)
    u = q @ h.w_basis.T + np.outer(t, h.v)
    if h.kernel.size:
        # scale kernel offsets to reach past the cone boundary
        scale = max(T, 1.0) * np.linalg.norm(h.v) * 0.5
        u = u + (rng.normal(size=(n, h.kernel.shape[1])) * scale) @ h.kernel.T
    return u


def verify_difference_identity(
    h: Hypertube,
    spec1: TruncationSpec,
    spec2: TruncationSpec,
    family: BoxFamily,
    T: float,
    samples: int = 10_000,
    seed: int = 0,
    band: float = BOUNDARY_BAND,
) -> dict:
    """Sample points near the box and compare
    ``u in C and phi(u) in box`` with ``u in trunc(b1) and not in trunc(b2)``."""
    rng = np.random.default_rng(seed)
    s1, s2 = spec1.at(T), spec2.at(T)
    u = _sample_neighbourhood(h, family, spec1.b, spec2.b, T, samples, rng)
    lhs = h.cone.contains(u) & family.contains(u, T)
    rhs = truncation_contains(h, s1, u) & ~truncation_contains(h, s2, u)
    dec = h.decompose(u)
    scale = np.maximum(1.0, np.linalg.norm(u, axis=1))
    near = (
        (np.abs(h.cone.margins(u)) <= band)
        | (family.margin(u, T) <= band * scale)
        | (h.q_margin(dec.q) <= band * scale)
        | (np.abs(dec.t - T - s1.b(dec.q)) <= band * scale)
        | (np.abs(dec.t - T - s2.b(dec.q)) <= band * scale)
        | (np.abs(dec.t) <= band * scale)
    )
    bad = (lhs != rhs) & ~near
    return {
        "samples": int(samples),
        "violations": int(bad.sum()),
        "ignored_in_band": int(((lhs != rhs) & near).sum()),
        "in_box": int(lhs.sum()),
        "in_difference": int(rhs.sum()),
    }
