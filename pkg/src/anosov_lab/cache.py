"""On-disk caches for enumerations and spectral samples.

Both caches are plain text.  Floats are written with 17 significant digits,
which round-trips IEEE doubles exactly, so a cache hit returns arrays that
are bit-identical to the ones that were stored.  A single lock file in the
cache directory serialises writers.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Sequence

import numpy as np
from filelock import FileLock

from .sampling import SpectrumSample, build_sample
from .spectra import Representation
from .words import GeneratorAlphabet, Word, enumerate_words

__all__ = ["CACHE_ENV", "resolve_cache_dir", "EnumerationCache", "SpectrumCache"]

CACHE_ENV = "ANOSOV_LAB_CACHE"


def resolve_cache_dir(path: str | os.PathLike | None) -> Path | None:
    """Explicit path first, then the environment variable, else no caching."""
    if path is None:
        path = os.environ.get(CACHE_ENV) or None
    return None if path is None else Path(path)


class _Cache:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.lock = FileLock(str(self.root / ".lock"))

    def _write(self, path: Path, text_writer) -> None:
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w") as fh:
            text_writer(fh)
        os.replace(tmp, path)


class EnumerationCache(_Cache):
    """Reduced words of one shard, one ``length<TAB>letters`` record per line."""

    def path(self, rank: int, max_len: int, partition: tuple[int, int]) -> Path:
        index, count = partition
        return self.root / f"words-r{rank}-L{max_len}-{index}of{count}.txt"

    def words(self, alphabet: GeneratorAlphabet, max_len: int, partition=(0, 1)) -> list[Word]:
        path = self.path(alphabet.rank, max_len, partition)
        with self.lock:
            if path.exists():
                return [self._parse(line) for line in path.read_text().splitlines()]
            words = list(enumerate_words(alphabet, max_len, partition))

            def write(fh):
                for w in words:
                    fh.write(f"{len(w)}\t{','.join(map(str, w.letters))}\n")

            self._write(path, write)
        return words

    @staticmethod
    def _parse(line: str) -> Word:
        n, _, body = line.partition("\t")
        letters = tuple(int(x) for x in body.split(",")) if body else ()
        if len(letters) != int(n):
            raise ValueError(f"corrupt enumeration record: {line!r}")
        return Word(letters)


class SpectrumCache(_Cache):
    """Spectral samples keyed by the representations' content hashes.

    Each record is ``length key v_1 ... v_m [signs ... loxodromic]`` where
    ``key`` encodes the word (see :func:`anosov_lab.words.word_keys`).
    """

    def key(self, reps: Sequence[Representation], max_len: int, kind: str, gap_tol: float) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([r.content_hash() for r in reps]).encode())
        h.update(f"{kind}|{gap_tol!r}".encode())
        return f"spectra-{kind}-L{max_len}-{h.hexdigest()[:16]}"

    def _width(self, meta: dict) -> int:
        width = sum(meta["dims"])
        return 2 + width + (width + 1 if meta["kind"] == "classes" else 0)

    def load(self, path: Path) -> SpectrumSample:
        with open(path) as fh:
            meta = json.loads(fh.readline())
            data = fh.read()
        dims = tuple(meta["dims"])
        width = sum(dims)
        # keys stay below 2^53, so parsing every field as a double is exact
        table = np.fromstring(data, sep=" ") if data.strip() else np.zeros(0)
        cols = self._width(meta)
        if table.size % cols:
            raise ValueError(f"corrupt spectrum cache {path}")
        table = table.reshape(-1, cols)
        lengths = table[:, 0].astype(np.int16)
        keys = table[:, 1].astype(np.int64)
        vectors = np.ascontiguousarray(table[:, 2 : 2 + width])
        signs = lox = None
        if meta["kind"] == "classes":
            signs = table[:, 2 + width : 2 + 2 * width].astype(np.int8)
            lox = table[:, 2 + 2 * width].astype(bool)
        return SpectrumSample(meta["kind"], meta["rank"], dims, lengths, keys, vectors, signs, lox)

    def store(self, path: Path, sample: SpectrumSample, chunk: int = 100_000) -> None:
        meta = {"kind": sample.kind, "rank": sample.rank, "dims": list(sample.dims)}
        width = sum(sample.dims)
        fmt = " ".join(["%d", "%d"] + ["%.17g"] * width)
        if sample.kind == "classes":
            fmt += " " + " ".join(["%d"] * (width + 1))
        fmt += "\n"

        def write(fh):
            fh.write(json.dumps(meta) + "\n")
            for start in range(0, len(sample), chunk):
                sl = slice(start, start + chunk)
                cols = [sample.lengths[sl, None], sample.keys[sl, None], sample.vectors[sl]]
                if sample.kind == "classes":
                    cols += [sample.signs[sl], sample.loxodromic[sl, None]]
                rows = np.hstack([np.asarray(c, dtype=object) for c in cols]).tolist()
                fh.write("".join(fmt % tuple(row) for row in rows))

        self._write(path, write)

    def sample(
        self,
        reps: Sequence[Representation],
        max_len: int,
        kind: str = "classes",
        shard_count: int = 1,
        workers: int | None = 1,
        gap_tol: float = 1e-6,
    ) -> SpectrumSample:
        path = self.root / (self.key(reps, max_len, kind, gap_tol) + ".txt")
        with self.lock:
            if path.exists():
                return self.load(path)
            sample = build_sample(reps, max_len, kind, shard_count, workers, gap_tol)
            self.store(path, sample)
        return sample

