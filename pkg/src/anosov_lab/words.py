"""Reduced words and conjugacy classes in a free group of finite rank.

Letters are signed generator indices: ``i`` stands for the i-th generator and
``-i`` for its inverse (indices start at 1).  Internally letters are also
coded as small integers ordered ``1 < -1 < 2 < -2 < ...``, so that the inverse
of a code ``c`` is ``c ^ 1``.  That order is the fixed total order used to pick
canonical conjugacy class representatives.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from functools import total_ordering
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "GeneratorAlphabet",
    "Word",
    "ConjugacyClass",
    "reduce",
    "cyclic_reduce",
    "canonical_rotation",
    "enumerate_words",
    "enumerate_conjugacy_classes",
    "is_primitive",
    "word_count",
    "prefix_depth",
    "shard_of",
    "level_codes",
    "level_expansion",
    "word_keys",
    "key_word",
    "cyclically_reduced_mask",
    "rotation_minimal_mask",
]


def letter_code(letter: int) -> int:
    return 2 * (abs(letter) - 1) + (letter < 0)


def code_letter(code: int) -> int:
    index = code // 2 + 1
    return -index if code & 1 else index


@dataclass(frozen=True)
class GeneratorAlphabet:
    rank: int
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        labels = tuple(self.labels) or tuple("abcdefghijklmnopqrstuvwxyz"[: self.rank])
        if len(labels) != self.rank:
            raise ValueError("need one label per generator")
        if len(set(labels)) != len(labels):
            raise ValueError(f"labels must be distinct: {labels}")
        object.__setattr__(self, "labels", labels)

    @property
    def n_letters(self) -> int:
        return 2 * self.rank

    def format(self, word: "Word") -> str:
        if not word.letters:
            return "1"
        out = []
        for x in word.letters:
            name = self.labels[abs(x) - 1]
            out.append(name if x > 0 else name.upper() if len(name) == 1 else name + "^-1")
        return "".join(out)

    def parse(self, text: str) -> "Word":
        """Parse a word written with lowercase labels for generators and
        uppercase for inverses, e.g. ``"abA"``.  ``"1"`` or ``""`` is the identity."""
        if text in ("", "1"):
            return Word(())
        letters = []
        for ch in text:
            if ch in self.labels:
                letters.append(self.labels.index(ch) + 1)
            elif ch.lower() in self.labels:
                letters.append(-(self.labels.index(ch.lower()) + 1))
            else:
                raise ValueError(f"unknown letter {ch!r}")
        return reduce(letters, self.rank)


@total_ordering
@dataclass(frozen=True)
class Word:
    """A freely reduced word.  Build through :func:`reduce` unless the letters
    are known to be reduced already."""

    letters: tuple[int, ...] = ()

    @property
    def length(self) -> int:
        return len(self.letters)

    def __len__(self) -> int:
        return len(self.letters)

    @property
    def codes(self) -> tuple[int, ...]:
        return tuple(letter_code(x) for x in self.letters)

    def inverse(self) -> "Word":
        return Word(tuple(-x for x in reversed(self.letters)))

    def __mul__(self, other: "Word") -> "Word":
        return reduce(self.letters + other.letters)

    def __lt__(self, other: "Word") -> bool:
        return (len(self), self.codes) < (len(other), other.codes)

    def __str__(self) -> str:
        return GeneratorAlphabet(max([abs(x) for x in self.letters], default=1)).format(self)


@dataclass(frozen=True)
class ConjugacyClass:
    """Nontrivial conjugacy class, stored by its canonical representative:
    cyclically reduced and minimal among its cyclic rotations."""

    representative: Word
    length: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "length", len(self.representative))

    @classmethod
    def of(cls, w: Word) -> "ConjugacyClass":
        core, _ = cyclic_reduce(w)
        if not core.letters:
            raise ValueError("the trivial class is not represented")
        return cls(canonical_rotation(core))


def reduce(letters: Iterable[int], rank: int | None = None) -> Word:
    out: list[int] = []
    for x in letters:
        x = int(x)
        if x == 0 or (rank is not None and abs(x) > rank):
            raise ValueError(f"letter {x} out of range for rank {rank}")
        if out and out[-1] == -x:
            out.pop()
        else:
            out.append(x)
    return Word(tuple(out))


def cyclic_reduce(w: Word) -> tuple[Word, Word]:
    """Split ``w = conjugator * core * conjugator^-1`` with ``core`` cyclically reduced."""
    letters = w.letters
    i, j = 0, len(letters) - 1
    while i < j and letters[i] == -letters[j]:
        i += 1
        j -= 1
    return Word(letters[i : j + 1]), Word(letters[:i])


def canonical_rotation(w: Word) -> Word:
    n = len(w)
    if n == 0:
        return w
    codes = w.codes
    best = min(range(n), key=lambda k: codes[k:] + codes[:k])
    return Word(w.letters[best:] + w.letters[:best])


def is_primitive(c: ConjugacyClass) -> bool:
    """True unless the representative is a proper power ``u^m`` with ``m >= 2``."""
    letters = c.representative.letters
    n = len(letters)
    for p in range(1, n):
        if n % p == 0 and letters == letters[:p] * (n // p):
            return False
    return True


def word_count(rank: int, length: int) -> int:
    """Number of reduced words of exactly ``length`` letters."""
    if length == 0:
        return 1
    return 2 * rank * (2 * rank - 1) ** (length - 1)


# -- sharding -------------------------------------------------------------------


def prefix_depth(rank: int, shard_count: int, max_len: int) -> int:
    """Depth at which the word tree is cut into shard-owned subtrees: the first
    level holding at least eight prefixes per shard."""
    depth = 1
    while word_count(rank, depth) < 8 * shard_count:
        depth += 1
    return max(0, min(depth, max_len))


def shard_of(codes: Sequence[int], depth: int, shard_count: int) -> int:
    return zlib.crc32(bytes(codes[:depth])) % shard_count


def _check_partition(partition: tuple[int, int]) -> tuple[int, int]:
    index, count = partition
    if count < 1 or not 0 <= index < count:
        raise ValueError(f"bad partition {partition}")
    return index, count


def enumerate_words(
    alphabet: GeneratorAlphabet, max_len: int, partition: tuple[int, int] = (0, 1)
) -> Iterator[Word]:
    """Yield the reduced words of length <= ``max_len`` owned by one shard,
    depth first by prefix.  The shards partition the full set."""
    if max_len < 0:
        raise ValueError("max_len must be >= 0")
    index, count = _check_partition(partition)
    depth = prefix_depth(alphabet.rank, count, max_len)
    n_letters = alphabet.n_letters

    def walk(codes: list[int]) -> Iterator[Word]:
        n = len(codes)
        if n <= depth:
            if shard_of(codes, depth, count) == index:
                yield Word(tuple(code_letter(c) for c in codes))
            elif n == depth:
                return
        else:
            yield Word(tuple(code_letter(c) for c in codes))
        if n == max_len:
            return
        for c in range(n_letters):
            if codes and c == codes[-1] ^ 1:
                continue
            codes.append(c)
            yield from walk(codes)
            codes.pop()

    yield from walk([])


def enumerate_conjugacy_classes(
    alphabet: GeneratorAlphabet, max_len: int, partition: tuple[int, int] = (0, 1)
) -> Iterator[ConjugacyClass]:
    """Yield each nontrivial conjugacy class with cyclically reduced length
    <= ``max_len`` exactly once, in (length, lexicographic) order per shard."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    for n, codes in level_codes(alphabet.rank, max_len, partition):
        if n == 0:
            continue
        keep = cyclically_reduced_mask(codes) & rotation_minimal_mask(codes)
        for row in codes[keep]:
            yield ConjugacyClass(Word(tuple(code_letter(int(c)) for c in row)))


# -- vectorised levels ----------------------------------------------------------


def _extend(codes: np.ndarray, n_letters: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All one-letter reduced extensions of each row, in lexicographic order.

    Returns ``(children, parent_index, last_letter)``.
    """
    n_rows, n = codes.shape
    new = np.arange(n_letters, dtype=np.int8)
    parent = np.repeat(np.arange(n_rows), n_letters)
    last = np.tile(new, n_rows)
    if n > 0:
        keep = last != (codes[parent, -1] ^ 1)
        parent, last = parent[keep], last[keep]
    return np.concatenate([codes[parent], last[:, None]], axis=1), parent, last


def level_expansion(
    rank: int, max_len: int, partition: tuple[int, int] = (0, 1)
) -> Iterator[tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Walk the word tree level by level for one shard.

    Yields ``(n, frontier, parent_index, last_letter, owned)``: ``frontier``
    holds the words of length n that must be kept to reach the shard's longer
    words, ``parent_index``/``last_letter`` describe how each row extends the
    previous frontier, and ``owned`` marks the rows belonging to the shard.
    """
    index, count = _check_partition(partition)
    depth = prefix_depth(rank, count, max_len)
    n_letters = 2 * rank
    frontier = np.zeros((1, 0), dtype=np.int8)
    parent = np.zeros(1, dtype=np.int64)
    last = np.full(1, -1, dtype=np.int8)
    for n in range(max_len + 1):
        if n > 0:
            frontier, parent, last = _extend(frontier, n_letters)
        if n <= depth:
            owners = np.array([shard_of(row.tobytes(), depth, count) for row in frontier])
            owned = owners == index
            if n == depth:
                frontier, parent, last = frontier[owned], parent[owned], last[owned]
                owned = np.ones(len(frontier), dtype=bool)
        else:
            owned = np.ones(len(frontier), dtype=bool)
        yield n, frontier, parent, last, owned


def level_codes(
    rank: int, max_len: int, partition: tuple[int, int] = (0, 1)
) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(n, codes)`` for n = 0..max_len where ``codes`` is an int8 array
    holding the shard's reduced words of length n, rows in lexicographic order.

    This is the same partition as :func:`enumerate_words`, laid out level by
    level so that callers can batch work per length.
    """
    for n, frontier, _, _, owned in level_expansion(rank, max_len, partition):
        yield n, frontier[owned]


def word_keys(codes: np.ndarray, n_letters: int) -> np.ndarray:
    """Integer key of each row read in base ``n_letters`` (unique per length)."""
    n = codes.shape[1]
    if n and n * np.log2(n_letters) >= 62:
        raise OverflowError("words too long for 64-bit keys")
    keys = np.zeros(len(codes), dtype=np.int64)
    for k in range(n):
        keys = keys * n_letters + codes[:, k]
    return keys


def key_codes(key: int, length: int, n_letters: int) -> list[int]:
    out = []
    for _ in range(length):
        key, c = divmod(int(key), n_letters)
        out.append(c)
    return out[::-1]


def key_word(key: int, length: int, n_letters: int) -> Word:
    return Word(tuple(code_letter(c) for c in key_codes(key, length, n_letters)))


def cyclically_reduced_mask(codes: np.ndarray) -> np.ndarray:
    if codes.shape[1] == 0:
        return np.zeros(len(codes), dtype=bool)
    return codes[:, 0] != (codes[:, -1] ^ 1)


def rotation_minimal_mask(codes: np.ndarray) -> np.ndarray:
    """Rows that are lexicographically <= every cyclic rotation of themselves."""
    n_rows, n = codes.shape
    keep = np.ones(n_rows, dtype=bool)
    rows = np.arange(n_rows)
    for shift in range(1, n):
        rot = np.roll(codes, -shift, axis=1)
        diff = rot != codes
        first = diff.argmax(axis=1)
        smaller = diff.any(axis=1) & (rot[rows, first] < codes[rows, first])
        keep &= ~smaller
    return keep
