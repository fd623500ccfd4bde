"""Batched spectral samples over enumerated words or conjugacy classes.

A sample stores, for every enumerated word (``kind="elements"``, Cartan
projections) or every canonical class representative (``kind="classes"``,
Jordan projections and sign patterns), the chamber vectors of each
representation concatenated into one row.  Rows are kept sorted by
(length, word code) so that samples built with different shard counts are
identical.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .spectra import Representation, batch_cartan, batch_jordan, batch_signs
from .words import (
    GeneratorAlphabet,
    Word,
    cyclically_reduced_mask,
    key_word,
    level_expansion,
    rotation_minimal_mask,
    word_keys,
)

__all__ = ["SpectrumSample", "sample_shard", "build_sample", "merge_samples", "KINDS"]

log = logging.getLogger(__name__)

KINDS = ("classes", "elements")


@dataclass
class SpectrumSample:
    """Concatenated chamber vectors for a list of words.

    ``vectors`` holds Jordan projections for classes and Cartan projections
    for elements.  ``signs`` and ``loxodromic`` are only filled for classes.
    """

    kind: str
    rank: int
    dims: tuple[int, ...]
    lengths: np.ndarray
    keys: np.ndarray
    vectors: np.ndarray
    signs: np.ndarray | None = None
    loxodromic: np.ndarray | None = None
    offsets: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        self.dims = tuple(int(n) for n in self.dims)
        self.offsets = tuple(np.concatenate([[0], np.cumsum(self.dims)]).astype(int))
        if self.vectors.shape != (len(self.lengths), sum(self.dims)):
            raise ValueError("vector array does not match lengths and dims")

    @property
    def projection(self) -> str:
        return "jordan" if self.kind == "classes" else "cartan"

    @property
    def n_letters(self) -> int:
        return 2 * self.rank

    def __len__(self) -> int:
        return len(self.lengths)

    def block(self, i: int) -> np.ndarray:
        """Chamber vectors of the i-th representation."""
        return self.vectors[:, self.offsets[i] : self.offsets[i + 1]]

    def sign_block(self, i: int) -> np.ndarray:
        if self.signs is None:
            raise ValueError("sample carries no sign patterns")
        return self.signs[:, self.offsets[i] : self.offsets[i + 1]]

    def word(self, i: int) -> Word:
        return key_word(self.keys[i], int(self.lengths[i]), self.n_letters)

    def words(self, index: Sequence[int] | np.ndarray | None = None) -> list[Word]:
        idx = range(len(self)) if index is None else np.asarray(index).ravel()
        return [self.word(int(i)) for i in idx]

    def labels(self, index=None, alphabet: GeneratorAlphabet | None = None) -> list[str]:
        alphabet = alphabet or GeneratorAlphabet(self.rank)
        return [alphabet.format(w) for w in self.words(index)]

    def select(self, mask: np.ndarray) -> "SpectrumSample":
        return SpectrumSample(
            kind=self.kind,
            rank=self.rank,
            dims=self.dims,
            lengths=self.lengths[mask],
            keys=self.keys[mask],
            vectors=self.vectors[mask],
            signs=None if self.signs is None else self.signs[mask],
            loxodromic=None if self.loxodromic is None else self.loxodromic[mask],
        )

    def up_to_length(self, max_len: int) -> "SpectrumSample":
        return self.select(self.lengths <= max_len)


def _rescale(m: np.ndarray, logdet: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scale = np.abs(m).max(axis=(1, 2))
    return m / scale[:, None, None], logdet - m.shape[-1] * np.log(scale)


def _check_reps(reps: Sequence[Representation]) -> int:
    if not reps:
        raise ValueError("need at least one representation")
    rank = reps[0].rank
    if any(rep.rank != rank for rep in reps):
        raise ValueError("all representations must have the same rank")
    return rank


def _levels(reps: Sequence[Representation], max_len: int, partition) -> Iterator:
    """Yield ``(n, codes, owned, prods)`` where ``prods`` holds, per
    representation, ``(g, ginv, logdet, logdet_inv, det_sign)`` for every
    frontier row.  Rows are rescaled to max entry 1; the log|det| of the
    rescaled stacks is tracked exactly from the letters instead of being
    recomputed from badly conditioned products."""
    rank = _check_reps(reps)
    letters = [rep.code_matrices() for rep in reps]
    letter_sign, letter_ld = zip(*(np.linalg.slogdet(lm) for lm in letters))
    prods = None
    for n, frontier, parent, last, owned in level_expansion(rank, max_len, partition):
        if n == 0:
            prods = [
                (np.eye(d)[None], np.eye(d)[None], np.zeros(1), np.zeros(1), np.ones(1))
                for d in (rep.dimension for rep in reps)
            ]
        else:
            nxt = []
            for (g, gi, ld, ldi, sg), lm, ls, lld in zip(prods, letters, letter_sign, letter_ld):
                g, ld = _rescale(g[parent] @ lm[last], ld[parent] + lld[last])
                gi, ldi = _rescale(lm[last ^ 1] @ gi[parent], ldi[parent] + lld[last ^ 1])
                nxt.append((g, gi, ld, ldi, sg[parent] * ls[last]))
            prods = nxt
        yield n, frontier, owned, prods


def sample_shard(
    reps: Sequence[Representation],
    max_len: int,
    kind: str = "classes",
    partition: tuple[int, int] = (0, 1),
    gap_tol: float = 1e-6,
) -> SpectrumSample:
    """Spectra of one shard of words (or class representatives) of length <= max_len."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    rank = _check_reps(reps)
    n_letters = 2 * rank
    dims = tuple(rep.dimension for rep in reps)
    lengths, keys, vecs, signs, lox = [], [], [], [], []
    for n, codes, owned, prods in _levels(reps, max_len, partition):
        if kind == "classes":
            if n == 0:
                continue
            keep = owned & cyclically_reduced_mask(codes) & rotation_minimal_mask(codes)
        else:
            keep = owned
        if not keep.any():
            continue
        rows = np.flatnonzero(keep)
        lengths.append(np.full(len(rows), n, dtype=np.int16))
        keys.append(word_keys(codes[rows], n_letters))
        parts = [tuple(x[rows] for x in p) for p in prods]
        if kind == "classes":
            blocks = [batch_jordan(*p) for p in parts]
            sign_blocks = [batch_signs(g, gi, sg) for g, gi, _, _, sg in parts]
            ok = np.ones(len(rows), dtype=bool)
            for b, s in zip(blocks, sign_blocks):
                ok &= np.all(-np.diff(b, axis=1) > gap_tol, axis=1) & np.all(s != 0, axis=1)
            signs.append(np.concatenate(sign_blocks, axis=1))
            lox.append(ok)
        else:
            blocks = [batch_cartan(g, gi, ld, ldi) for g, gi, ld, ldi, _ in parts]
        vecs.append(np.concatenate(blocks, axis=1))
    width = sum(dims)
    return SpectrumSample(
        kind=kind,
        rank=rank,
        dims=dims,
        lengths=np.concatenate(lengths) if lengths else np.zeros(0, dtype=np.int16),
        keys=np.concatenate(keys) if keys else np.zeros(0, dtype=np.int64),
        vectors=np.concatenate(vecs) if vecs else np.zeros((0, width)),
        signs=(np.concatenate(signs) if signs else np.zeros((0, width), np.int8))
        if kind == "classes"
        else None,
        loxodromic=(np.concatenate(lox) if lox else np.zeros(0, bool)) if kind == "classes" else None,
    )


def merge_samples(parts: Sequence[SpectrumSample]) -> SpectrumSample:
    """Concatenate shard samples and sort rows by (length, word code)."""
    if not parts:
        raise ValueError("nothing to merge")
    first = parts[0]
    for p in parts[1:]:
        if (p.kind, p.rank, p.dims) != (first.kind, first.rank, first.dims):
            raise ValueError("incompatible samples")
    lengths = np.concatenate([p.lengths for p in parts])
    keys = np.concatenate([p.keys for p in parts])
    order = np.lexsort((keys, lengths))

    def cat(name):
        arrays = [getattr(p, name) for p in parts]
        return None if arrays[0] is None else np.concatenate(arrays)[order]

    return SpectrumSample(
        kind=first.kind,
        rank=first.rank,
        dims=first.dims,
        lengths=lengths[order],
        keys=keys[order],
        vectors=cat("vectors"),
        signs=cat("signs"),
        loxodromic=cat("loxodromic"),
    )


def _run_shard(args) -> SpectrumSample:
    return sample_shard(*args)


def build_sample(
    reps: Sequence[Representation],
    max_len: int,
    kind: str = "classes",
    shard_count: int = 1,
    workers: int | None = 1,
    gap_tol: float = 1e-6,
) -> SpectrumSample:
    """Sharded map over the word tree followed by a deterministic merge.

    ``workers=None`` uses one process per CPU (capped by ``shard_count``);
    ``workers=1`` runs the shards in this process one after another.
    """
    jobs = [(list(reps), max_len, kind, (i, shard_count), gap_tol) for i in range(shard_count)]
    workers = min(shard_count, workers or os.cpu_count() or 1)
    if workers <= 1:
        parts = []
        for job in jobs:
            parts.append(_run_shard(job))
            log.debug("shard %d/%d: %d rows", job[3][0] + 1, shard_count, len(parts[-1]))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_shard, jobs))
    return merge_samples(parts)
