import numpy as np
import pytest

from anosov_lab.cache import CACHE_ENV, EnumerationCache, SpectrumCache, resolve_cache_dir
from anosov_lab.sampling import SpectrumSample, build_sample, merge_samples, sample_shard
from anosov_lab.spectra import batch_signs, cartan_projection, evaluate, jordan_projection
from anosov_lab.words import GeneratorAlphabet, enumerate_conjugacy_classes, enumerate_words


def _same(a: SpectrumSample, b: SpectrumSample):
    assert (a.kind, a.rank, a.dims) == (b.kind, b.rank, b.dims)
    assert np.array_equal(a.lengths, b.lengths)
    assert np.array_equal(a.keys, b.keys)
    assert np.array_equal(a.vectors, b.vectors)
    for name in ("signs", "loxodromic"):
        x, y = getattr(a, name), getattr(b, name)
        assert (x is None and y is None) or np.array_equal(x, y)


@pytest.fixture(scope="module")
def reps(schottky_rep):
    return [schottky_rep]


def test_element_sample_matches_direct_evaluation(reps):
    s = build_sample(reps, 5, "elements")
    words = list(enumerate_words(GeneratorAlphabet(2), 5))
    assert len(s) == len(words)
    got = {w.letters: v for w, v in zip(s.words(), s.vectors)}
    for w in words:
        assert np.allclose(got[w.letters], cartan_projection(evaluate(reps[0], w)), atol=1e-9)


def test_class_sample_matches_direct_evaluation(reps):
    s = build_sample(reps, 6, "classes")
    classes = list(enumerate_conjugacy_classes(GeneratorAlphabet(2), 6))
    assert sorted(w.letters for w in s.words()) == sorted(c.representative.letters for c in classes)
    for w, v in zip(s.words()[::7], s.vectors[::7]):
        assert np.allclose(v, jordan_projection(evaluate(reps[0], w)), atol=1e-8)
    assert s.loxodromic.all()
    assert np.all(s.signs == 1)


@pytest.mark.parametrize("kind", ["classes", "elements"])
def test_shard_count_does_not_change_sample(reps, kind):
    ref = build_sample(reps, 7, kind, shard_count=1)
    for shards in (2, 5):
        _same(build_sample(reps, 7, kind, shard_count=shards), ref)


def test_merge_is_order_independent(reps):
    parts = [sample_shard(reps, 6, "elements", (i, 3)) for i in range(3)]
    _same(merge_samples(parts), merge_samples(parts[::-1]))
    with pytest.raises(ValueError):
        merge_samples([])


def test_up_to_length_and_select(reps):
    s = build_sample(reps, 6, "elements")
    short = s.up_to_length(3)
    assert short.lengths.max() == 3
    _same(short, build_sample(reps, 3, "elements"))


def test_batch_signs_for_sample_rows(reps):
    s = build_sample(reps, 4, "classes")
    g = np.array([evaluate(reps[0], w) for w in s.words()])
    assert np.array_equal(batch_signs(g, np.linalg.inv(g)), s.signs)


@pytest.mark.parametrize("kind", ["classes", "elements"])
def test_spectrum_cache_round_trip_is_bit_identical(tmp_path, reps, kind):
    cache = SpectrumCache(tmp_path)
    first = cache.sample(reps, 6, kind, shard_count=3)
    files = list(tmp_path.glob("spectra-*.txt"))
    assert len(files) == 1
    second = SpectrumCache(tmp_path).sample(reps, 6, kind, shard_count=3)
    _same(first, second)
    _same(second, build_sample(reps, 6, kind))


def test_cache_key_depends_on_matrices(reps, schottky_rep):
    from anosov_lab.spectra import Representation

    cache_key = SpectrumCache.key
    other = Representation("other", [g.copy() for g in schottky_rep.generators])
    other.generators[0][0, 0] += 1e-12
    assert cache_key(None, reps, 6, "classes", 1e-6) != cache_key(None, [other], 6, "classes", 1e-6)
    assert cache_key(None, reps, 6, "classes", 1e-6) != cache_key(None, reps, 6, "elements", 1e-6)


def test_corrupt_cache_is_rejected(tmp_path, reps):
    cache = SpectrumCache(tmp_path)
    cache.sample(reps, 3, "elements")
    path = next(tmp_path.glob("spectra-*.txt"))
    path.write_text(path.read_text() + "1 2\n")
    with pytest.raises(ValueError):
        cache.load(path)


def test_enumeration_cache_round_trip(tmp_path):
    alpha = GeneratorAlphabet(2)
    first = EnumerationCache(tmp_path).words(alpha, 5, (1, 3))
    second = EnumerationCache(tmp_path).words(alpha, 5, (1, 3))
    assert first == second == list(enumerate_words(alpha, 5, (1, 3)))


def test_cache_dir_resolution(monkeypatch, tmp_path):
    monkeypatch.delenv(CACHE_ENV, raising=False)
    assert resolve_cache_dir(None) is None
    monkeypatch.setenv(CACHE_ENV, str(tmp_path))
    assert resolve_cache_dir(None) == tmp_path
    assert resolve_cache_dir(tmp_path / "x") == tmp_path / "x"
