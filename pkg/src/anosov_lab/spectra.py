"""Matrix representations of free groups and their Cartan / Jordan projections.

Chamber vectors are decreasing real n-tuples summing to zero: the logarithms
of singular values (Cartan projection) or of eigenvalue moduli (Jordan
projection) of a determinant-normalised matrix.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .words import Word

__all__ = [
    "Representation",
    "HolonomySign",
    "SpectralError",
    "normalize_det",
    "evaluate",
    "evaluate_scaled",
    "cartan_projection",
    "jordan_projection",
    "is_loxodromic",
    "holonomy_sign",
    "opposition_involution",
    "hilbert_length",
    "hilbert_distance",
    "symmetric_square",
    "simple_roots",
    "anosov_gap_constant",
    "batch_cartan",
    "batch_jordan",
    "batch_signs",
    "canonical_signs",
]

DEFAULT_GAP_TOL = 1e-6
MAGNITUDE_CEILING = 1e150


class SpectralError(ValueError):
    pass


def normalize_det(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    sign, logdet = np.linalg.slogdet(g)
    if sign == 0 or not np.isfinite(logdet):
        raise SpectralError("singular matrix")
    return g * np.exp(-logdet / g.shape[0])


@dataclass
class Representation:
    """Generator matrices for a representation of the free group F_k.

    Matrices are scaled to ``|det| = 1`` on construction when ``normalize`` is
    set.  ``inverses`` is filled in from the normalised generators.
    """

    name: str
    generators: Sequence[np.ndarray]
    normalize: bool = True
    inverses: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        gens = [np.array(g, dtype=float) for g in self.generators]
        if not gens:
            raise ValueError("need at least one generator")
        n = gens[0].shape[0]
        if n < 2:
            raise ValueError("dimension must be >= 2")
        for i, g in enumerate(gens):
            if g.shape != (n, n):
                raise ValueError(f"generator {i + 1} has shape {g.shape}, expected {(n, n)}")
            if self.normalize:
                gens[i] = normalize_det(g)
            elif abs(np.linalg.det(g)) < 1e-300:
                raise SpectralError(f"generator {i + 1} is singular")
        if self.normalize:
            for g in gens:
                if abs(abs(np.linalg.det(g)) - 1.0) > 1e-9:
                    raise SpectralError("determinant normalisation failed")
        self.generators = gens
        self.inverses = [np.linalg.inv(g) for g in gens]

    @property
    def rank(self) -> int:
        return len(self.generators)

    @property
    def dimension(self) -> int:
        return self.generators[0].shape[0]

    def letter_matrix(self, letter: int) -> np.ndarray:
        i = abs(letter) - 1
        if not 0 <= i < self.rank:
            raise ValueError(f"letter {letter} out of range for rank {self.rank}")
        return self.generators[i] if letter > 0 else self.inverses[i]

    def code_matrices(self) -> np.ndarray:
        """Stack of letter matrices indexed by letter code (a, A, b, B, ...)."""
        out = []
        for g, ginv in zip(self.generators, self.inverses):
            out.extend([g, ginv])
        return np.array(out)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.dimension).encode())
        for g in self.generators:
            h.update(np.ascontiguousarray(g, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def evaluate(rep: Representation, w: Word, ceiling: float = MAGNITUDE_CEILING) -> np.ndarray:
    """Product of the letter matrices of ``w``; identity for the empty word.

    Raises ``OverflowError`` when an entry exceeds ``ceiling``; use
    :func:`evaluate_scaled` for long words.
    """
    g = np.eye(rep.dimension)
    for x in w.letters:
        g = g @ rep.letter_matrix(x)
        if np.abs(g).max() > ceiling:
            raise OverflowError(f"entries exceed {ceiling:g}; use evaluate_scaled")
    return g


def evaluate_scaled(rep: Representation, w: Word, every: int = 8) -> tuple[np.ndarray, float]:
    """Return ``(m, s)`` with ``evaluate(rep, w) == exp(s) * m`` and ``max|m| = 1``
    after every ``every`` letters.  Projections only need ``m`` (they normalise
    the determinant)."""
    g = np.eye(rep.dimension)
    log_scale = 0.0
    for k, x in enumerate(w.letters, 1):
        g = g @ rep.letter_matrix(x)
        if k % every == 0:
            m = np.abs(g).max()
            g = g / m
            log_scale += np.log(m)
    return g, log_scale


def _trace_free(x: np.ndarray) -> np.ndarray:
    return x - x.mean(axis=-1, keepdims=True)


def cartan_projection(
    g: np.ndarray,
    ginv: np.ndarray | None = None,
    logdet: float | None = None,
    logdet_inv: float | None = None,
) -> np.ndarray:
    """Cartan projection of ``g``.  For products too long for the small
    singular values to survive rounding, pass the separately accumulated
    inverse (and log|det| when known) so the lower entries come from it."""
    g = np.asarray(g, dtype=float)
    if ginv is not None:
        wrap = lambda x: None if x is None else np.array([x], dtype=float)  # noqa: E731
        return batch_cartan(g[None], np.asarray(ginv, dtype=float)[None], wrap(logdet), wrap(logdet_inv))[0]
    s = np.linalg.svd(g, compute_uv=False)
    if s[-1] <= 0 or not np.all(np.isfinite(s)):
        raise SpectralError("singular matrix")
    return _trace_free(np.log(s))


def _log_moduli(g: np.ndarray) -> np.ndarray:
    try:
        ev = np.linalg.eigvals(g)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"eigenvalue solver failed: {exc}") from exc
    if np.abs(ev).min() <= 0 or not np.all(np.isfinite(ev)):
        raise SpectralError("singular matrix")
    return np.sort(np.log(_merge_unresolved(ev, g)))[::-1]


def jordan_projection(
    g: np.ndarray,
    ginv: np.ndarray | None = None,
    logdet: float | None = None,
    logdet_inv: float | None = None,
) -> np.ndarray:
    """Jordan projection of ``g``.  As for :func:`cartan_projection`, an
    independently accumulated inverse supplies the lower entries."""
    g = np.asarray(g, dtype=float)
    if ginv is None:
        return _trace_free(_log_moduli(g))
    ginv = np.asarray(ginv, dtype=float)
    n = len(g)
    top = _log_moduli(g) - _log_det(g[None], logdet)[0] / n
    bot = _log_moduli(ginv) - _log_det(ginv[None], logdet_inv)[0] / n
    return _split_logs(top[None], bot[None])[0]


def _merge_unresolved(ev: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Give each cluster of eigenvalues that the solver cannot resolve the
    geometric mean of its moduli.  A defective eigenvalue of multiplicity k
    splits by about (eps K)^(1/k) relative to its size under rounding, where
    K ~ cond(g) / (modulus spread) measures the eigenvector conditioning; the
    mean log-modulus of the split cluster stays accurate to eps."""
    n = len(ev)
    mod = np.abs(ev)
    if n < 2:
        return mod
    s = np.linalg.svd(g, compute_uv=False)
    K = max(s[0] / s[-1] * mod.min() / mod.max(), 1.0)
    radius = 10.0 * (np.finfo(float).eps * K) ** (1.0 / n)
    label = np.arange(n)
    for i in range(n):
        for j in range(i + 1, n):
            if abs(ev[i] - ev[j]) <= radius * max(mod[i], mod[j]):
                label[label == label[j]] = label[i]
    logs = np.log(mod)
    for k in np.unique(label):
        logs[label == k] = logs[label == k].mean()
    return np.exp(logs)


def is_loxodromic(g: np.ndarray, gap_tol: float = DEFAULT_GAP_TOL) -> bool:
    lam = jordan_projection(g)
    return bool(np.all(-np.diff(lam) > gap_tol))


@dataclass(frozen=True)
class HolonomySign:
    """Eigenvalue sign pattern up to a global sign; first entry is +1."""

    signs: tuple[int, ...]

    def __mul__(self, other: "HolonomySign") -> "HolonomySign":
        return HolonomySign(canonical_signs(np.multiply(self.signs, other.signs)))


def canonical_signs(signs) -> tuple[int, ...]:
    signs = [int(s) for s in signs]
    lead = next((s for s in signs if s != 0), 1)
    return tuple(s * lead for s in signs)


def holonomy_sign(g: np.ndarray, gap_tol: float = DEFAULT_GAP_TOL) -> HolonomySign:
    g = np.asarray(g, dtype=float)
    if not is_loxodromic(g, gap_tol):
        raise SpectralError("holonomy sign pattern needs a loxodromic element")
    ev = np.linalg.eigvals(g)
    ev = ev[np.argsort(-np.abs(ev))]
    if np.any(np.abs(ev.imag) > 1e-9 * np.abs(ev)):
        raise SpectralError("non-real eigenvalue in a separated spectrum")
    return HolonomySign(canonical_signs(np.sign(ev.real)))


def opposition_involution(x: np.ndarray) -> np.ndarray:
    return -np.asarray(x, dtype=float)[..., ::-1]


def hilbert_length(lam: np.ndarray) -> float:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (3,):
        raise ValueError("Hilbert length is defined for 3-dimensional chamber vectors")
    return 0.5 * (lam[0] - lam[2])


def hilbert_distance(w, x, y, z, tol: float = 1e-9) -> float:
    """Hilbert distance between ``x`` and ``y`` given the boundary points
    ``w`` and ``z`` of the chord, all collinear in the order w, x, y, z."""
    w, x, y, z = (np.atleast_1d(np.asarray(p, dtype=float)) for p in (w, x, y, z))
    direction = z - w
    span = np.linalg.norm(direction)
    if span == 0:
        raise ValueError("degenerate chord")
    unit = direction / span
    params = []
    for p in (x, y):
        rel = p - w
        s = rel @ unit
        if np.linalg.norm(rel - s * unit) > tol * max(1.0, span):
            raise ValueError("points are not collinear")
        params.append(s)
    sx, sy = params
    if not (0 < sx <= sy < span):
        raise ValueError("points must be ordered w, x, y, z with w != x and y != z")
    num = np.linalg.norm(w - y) * np.linalg.norm(x - z)
    den = np.linalg.norm(w - x) * np.linalg.norm(y - z)
    return 0.5 * float(np.log(num / den))


def symmetric_square(a: np.ndarray) -> np.ndarray:
    """Action of a 2x2 matrix on symmetric 2-tensors (basis e1^2, e1 e2, e2^2).

    For ``a`` in SL2 this is the irreducible 3-dimensional representation,
    with eigenvalues ``t^2, 1, t^-2`` when ``a`` has eigenvalues ``t, 1/t``.
    """
    (p, q), (r, s) = np.asarray(a, dtype=float)
    return np.array(
        [
            [p * p, p * q, q * q],
            [2 * p * r, p * s + q * r, 2 * q * s],
            [r * r, r * s, s * s],
        ]
    )


def simple_roots(n: int) -> np.ndarray:
    """Rows are the simple roots x_k - x_{k+1} of SL_n."""
    roots = np.zeros((n - 1, n))
    for k in range(n - 1):
        roots[k, k], roots[k, k + 1] = 1.0, -1.0
    return roots


def anosov_gap_constant(lengths: np.ndarray, vectors: np.ndarray) -> float:
    """Largest C with ``min_root(x) >= C*len - 1/C`` for every sample row.

    ``vectors`` are chamber vectors of one factor; the bound is solved
    per length from ``len*C^2 - m*C - 1 <= 0``.
    """
    lengths = np.asarray(lengths)
    vectors = np.asarray(vectors, dtype=float)
    gaps = (vectors @ simple_roots(vectors.shape[1]).T).min(axis=1)
    best = np.inf
    for n in np.unique(lengths):
        if n <= 0:
            continue
        m = gaps[lengths == n].min()
        best = min(best, (m + np.sqrt(m * m + 4 * n)) / (2 * n))
    if not np.isfinite(best):
        raise ValueError("no nontrivial words in sample")
    return float(best)


# -- batched projections ---------------------------------------------------------
#
# For long words the small singular values / eigenvalues of g lose all relative
# precision.  The batch routines therefore take g and g^-1 (both accumulated
# letter by letter) and read the top half of the spectrum from g and the bottom
# half from g^-1.


def _split_logs(top: np.ndarray, bottom_inv: np.ndarray) -> np.ndarray:
    n = top.shape[1]
    if n == 3:
        first, last = top[:, 0], -bottom_inv[:, 0]
        return np.stack([first, -(first + last), last], axis=1)
    head = (n + 1) // 2
    tail = n - head
    out = np.empty_like(top)
    out[:, :head] = top[:, :head]
    out[:, head:] = -bottom_inv[:, :tail][:, ::-1]
    return _trace_free(out)


def _safe_log(x: np.ndarray) -> np.ndarray:
    # only the large entries are used downstream; underflowed ones may be 0
    return np.log(np.maximum(np.abs(x), np.finfo(float).tiny))


def _log_det(g: np.ndarray, given: np.ndarray | None) -> np.ndarray:
    # Products of many letters are badly conditioned, so callers that know
    # log|det| exactly (e.g. from the letters) should pass it in.
    return np.linalg.slogdet(g)[1] if given is None else np.atleast_1d(np.asarray(given, dtype=float))


def _det_sign(g: np.ndarray, given: np.ndarray | None) -> np.ndarray:
    return np.linalg.slogdet(g)[0] if given is None else np.asarray(given, dtype=float)


def batch_cartan(
    g: np.ndarray,
    ginv: np.ndarray,
    logdet: np.ndarray | None = None,
    logdet_inv: np.ndarray | None = None,
) -> np.ndarray:
    """Cartan projections of a stack of matrices, given the inverse stack.

    ``logdet``/``logdet_inv`` are log|det| of the two stacks; they are
    computed when omitted.
    """
    n = g.shape[-1]
    if len(g) == 0:
        return np.zeros((0, n))
    ld = _log_det(g, logdet)
    if n == 2:
        gn = g * np.exp(-ld / 2)[:, None, None]
        f = np.einsum("kij,kij->k", gn, gn)
        s1sq = 0.5 * (f + np.sqrt(np.maximum(f * f - 4.0, 0.0)))
        top = 0.5 * np.log(np.maximum(s1sq, 1.0))
        return np.stack([top, -top], axis=1)
    top = _safe_log(np.linalg.svd(g, compute_uv=False)) - ld[:, None] / n
    bot = _safe_log(np.linalg.svd(ginv, compute_uv=False)) - _log_det(ginv, logdet_inv)[:, None] / n
    return _split_logs(top, bot)


def _sorted_eigs(g: np.ndarray) -> np.ndarray:
    ev = np.linalg.eigvals(g)
    order = np.argsort(-np.abs(ev), axis=1, kind="stable")
    return np.take_along_axis(ev, order, axis=1)


def _dominant_root(x0: np.ndarray, a: np.ndarray, e2: np.ndarray, e3: np.ndarray, steps: int = 4):
    """Newton polish of the dominant real root of x^3 - a x^2 + e2 x - e3.

    Evaluated in Horner form this keeps full relative precision when the
    root dominates the other two, unlike an eigensolver on the product."""
    x = x0.copy()
    for _ in range(steps):
        p = ((x - a) * x + e2) * x - e3
        dp = (3 * x - 2 * a) * x + e2
        ok = dp != 0
        x = np.where(ok, x - np.where(ok, p, 0) / np.where(ok, dp, 1), x)
    return x


def _cubic_top(g, ginv, ld, ld_inv, det_sign):
    """Dominant eigenvalues (signed, det-normalised) of g and of g^-1 for
    real 3x3 stacks, plus a mask of rows where both are real."""
    ev = _sorted_eigs(g)[:, 0]
    ev_inv = _sorted_eigs(ginv)[:, 0]
    real = (np.abs(ev.imag) <= 1e-9 * np.abs(ev)) & (np.abs(ev_inv.imag) <= 1e-9 * np.abs(ev_inv))
    a = np.trace(g, axis1=1, axis2=2) * np.exp(-ld / 3)
    b = np.trace(ginv, axis1=1, axis2=2) * np.exp(-ld_inv / 3)
    top = np.where(real, ev.real * np.exp(-ld / 3), 1.0)
    top_inv = np.where(real, ev_inv.real * np.exp(-ld_inv / 3), 1.0)
    x = _dominant_root(top, a, det_sign * b, det_sign)
    y = _dominant_root(top_inv, b, det_sign * a, det_sign)
    # keep the solver value wherever the polish wandered off
    x = np.where(np.isfinite(x) & (np.sign(x) == np.sign(top)), x, top)
    y = np.where(np.isfinite(y) & (np.sign(y) == np.sign(top_inv)), y, top_inv)
    return x, y, real


def batch_jordan(
    g: np.ndarray,
    ginv: np.ndarray,
    logdet: np.ndarray | None = None,
    logdet_inv: np.ndarray | None = None,
    det_sign: np.ndarray | None = None,
) -> np.ndarray:
    n = g.shape[-1]
    if len(g) == 0:
        return np.zeros((0, n))
    ld = _log_det(g, logdet)
    if n == 2:
        tr = np.abs(np.trace(g, axis1=1, axis2=2)) * np.exp(-ld / 2)
        disc = np.sqrt(np.maximum(tr * tr - 4.0, 0.0))
        top = np.log(np.maximum(0.5 * (tr + disc), 1.0))
        return np.stack([top, -top], axis=1)
    ld_inv = _log_det(ginv, logdet_inv)
    if n == 3:
        x, y, real = _cubic_top(g, ginv, ld, ld_inv, _det_sign(g, det_sign))
        first = np.log(np.abs(x))
        last = -np.log(np.abs(y))
        fallback = _split_logs(
            _safe_log(_sorted_eigs(g)) - ld[:, None] / n,
            _safe_log(_sorted_eigs(ginv)) - ld_inv[:, None] / n,
        )
        polished = np.stack([first, -(first + last), last], axis=1)
        return np.where(real[:, None], polished, fallback)
    top = _safe_log(_sorted_eigs(g)) - ld[:, None] / n
    bot = _safe_log(_sorted_eigs(ginv)) - ld_inv[:, None] / n
    return _split_logs(top, bot)


def batch_signs(g: np.ndarray, ginv: np.ndarray, det_sign: np.ndarray | None = None) -> np.ndarray:
    """Canonical eigenvalue sign patterns (int8 rows, first entry +1).

    Rows whose relevant eigenvalues are not real get zeros; callers only use
    rows already known to be loxodromic.
    """
    n = g.shape[-1]
    if len(g) == 0:
        return np.zeros((0, n), dtype=np.int8)
    head = (n + 1) // 2
    tail = n - head
    dsign = _det_sign(g, det_sign)
    if n == 2:
        s1 = np.sign(np.trace(g, axis1=1, axis2=2))
        signs = np.stack([s1, s1 * dsign], axis=1)
    elif n == 3:
        e1, e3 = _sorted_eigs(g)[:, 0], _sorted_eigs(ginv)[:, 0]
        real = (np.abs(e1.imag) <= 1e-9 * np.abs(e1)) & (np.abs(e3.imag) <= 1e-9 * np.abs(e3))
        s1, s3 = np.sign(e1.real), np.sign(e3.real)
        signs = np.where(real[:, None], np.stack([s1, dsign * s1 * s3, s3], axis=1), 0.0)
    else:
        top = _sorted_eigs(g)[:, :head]
        bot = _sorted_eigs(ginv)[:, :tail][:, ::-1]
        ev = np.concatenate([top, bot], axis=1)
        real = np.abs(ev.imag) <= 1e-9 * np.abs(ev)
        signs = np.where(real, np.sign(ev.real), 0.0)
    lead = np.where(signs[:, :1] == 0, 1.0, signs[:, :1])
    return (signs * lead).astype(np.int8)
