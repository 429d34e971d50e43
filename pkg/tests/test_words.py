import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anosov.errors import (CacheFormatError, ConfigurationError, InvalidInputError,
                           MatrixOverflowError, PreconditionError, ResourceError,
                           StaleCacheError)
from anosov.fixtures import hyperbolic, product_schottky, rank_one_schottky, rotation
from anosov.matgroup import cartan_projection, element, norms
from anosov.words import (GeneratorSystem, ball_size, cached_ball, coset_invariants,
                          dedup_cosets, enumerate_ball, is_reduced, load_table, parse_word,
                          reduce_word, save_table, schottky_check, word_string)


def boost(t):
    return np.array([[np.cosh(t), np.sinh(t)], [np.sinh(t), np.cosh(t)]])


def test_ball_sizes():
    gens = rank_one_schottky()
    assert len(enumerate_ball(gens, 0)) == 1
    assert len(enumerate_ball(gens, 3)) == 1 + 4 + 12 + 36 == ball_size(2, 3)


def test_mu_matches_explicit_products():
    gens = product_schottky()
    table = enumerate_ball(gens, 6)
    rng = np.random.default_rng(3)
    ab = table.find(parse_word("ab"))
    g = gens.generators[0] @ gens.generators[1]
    assert np.allclose(table.mu[ab], cartan_projection(g), atol=1e-12)
    # naive oracle: full products and the top singular value of each 2x2 factor
    for i in rng.choice(len(table), 100, replace=False):
        word = table.word(int(i))
        expected = []
        for f in range(2):
            prod = np.eye(2)
            for a in word:
                prod = prod @ gens.element(a).factors[f]
            top = np.log(np.linalg.svd(prod, compute_uv=False)[0])
            expected += [top, -top]
        assert np.allclose(table.mu[i], expected, rtol=1e-12, atol=1e-9)


def test_word_helpers():
    assert word_string(parse_word("aB")) == "aB"
    assert is_reduced([1, 2, -2]) is False
    assert reduce_word([1, 2, -2, -1, 2]) == [2]


def test_enumeration_errors():
    with pytest.raises(ResourceError, match="max_rows"):
        enumerate_ball(rank_one_schottky(), 6, max_rows=100)
    huge = GeneratorSystem([element(np.array([[1e100, 0], [1, 1e-100]])),
                            element(np.array([[1e-100, 1], [0, 1e100]]))])
    with pytest.raises(MatrixOverflowError, match="word"):
        enumerate_ball(huge, 4)


def test_enumeration_is_thread_independent():
    gens = product_schottky()
    a = enumerate_ball(gens, 7, threads=1)
    b = enumerate_ball(gens, 7, threads=4)
    assert np.array_equal(a.words, b.words)
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.lam, b.lam)


def test_word_length_norm_compatibility():
    gens = product_schottky()
    table = enumerate_ball(gens, 8)
    one = norms(table.mu[table.lengths == 1]).max()
    rank = gens.descriptor.rank
    for depth in range(1, 9):
        assert norms(table.mu[table.lengths <= depth]).max() <= depth * one + rank


# --- Schottky checks -------------------------------------------------------

def test_schottky_far_apart_passes():
    report = schottky_check(rank_one_schottky())
    assert report.passed and report.epsilon_hat < 0.1


def test_schottky_short_translation_fails():
    gens = GeneratorSystem([element(hyperbolic(0.1)), element(hyperbolic(0.1, 0.05))])
    report = schottky_check(gens)
    assert report.verdict == "fail" and report.conditions["3"] is False


def test_schottky_errors():
    with pytest.raises(InvalidInputError):
        GeneratorSystem([element(hyperbolic(5.0))])
    with pytest.warns(UserWarning):
        gens = GeneratorSystem([element(rotation(0.3)), element(hyperbolic(3.0))])
    with pytest.raises(PreconditionError):
        schottky_check(gens)


def test_schottky_verdict_stable_under_more_samples():
    gens = rank_one_schottky()
    a, b = schottky_check(gens, 64), schottky_check(gens, 128)
    assert a.verdict == b.verdict or "inconclusive" in (a.verdict, b.verdict)


# --- coset deduplication ---------------------------------------------------

def test_dedup_merges_cosets_of_gamma_cap_h():
    # b preserves J = diag(1, -1), so b^k gamma and gamma share gamma^T J gamma
    J = np.diag([1.0, -1.0])
    a = rotation(1.2) @ np.diag([np.exp(3), np.exp(-3)]) @ rotation(-1.2)
    gens = GeneratorSystem([element(a), element(boost(3.0))])
    table = enumerate_ball(gens, 1)
    out = dedup_cosets(table, "orthogonal-form", J=J)
    assert len(out) == 3
    assert sorted(word_string(out.word(i)) for i in range(len(out))) == ["A", "a", "e"]


def test_dedup_keeps_free_cosets():
    # brute-force pairwise oracle at depth 4
    table = enumerate_ball(product_schottky(), 4)
    inv = coset_invariants(table, "factor-ratio")
    n = len(table)
    same = [np.allclose(inv[i], inv[j], rtol=1e-9, atol=1e-9)
            for i, j in itertools.combinations(range(n), 2)]
    assert not any(same)
    assert len(dedup_cosets(table, "factor-ratio")) == n


def test_orthogonal_element_has_identity_invariant():
    J = np.diag([1.0, -1.0])
    gens = GeneratorSystem([element(boost(2.0)), element(rotation(0.9) @ np.diag([20.0, 0.05])
                                                          @ rotation(-0.9))])
    table = enumerate_ball(gens, 1)
    inv = coset_invariants(table, "orthogonal-form", J=J)
    assert np.allclose(inv[table.find([1])], inv[table.find([])], atol=1e-12)


def test_unknown_invariant_kind():
    with pytest.raises(ConfigurationError):
        dedup_cosets(enumerate_ball(product_schottky(), 1), "no-such-kind")


# --- persistence -----------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    gens = product_schottky()
    table = enumerate_ball(gens, 5, with_flags=True)
    save_table(table, tmp_path / "t.bin")
    back = load_table(tmp_path / "t.bin", gens)
    assert np.array_equal(back.words, table.words)
    assert np.array_equal(back.mu, table.mu) and np.array_equal(back.lam, table.lam)
    assert np.array_equal(back.flags, table.flags)


def test_stale_and_corrupt_cache(tmp_path):
    table = enumerate_ball(product_schottky(), 3)
    path = tmp_path / "t.bin"
    save_table(table, path)
    with pytest.raises(StaleCacheError):
        load_table(path, product_schottky(lengths=(6.0, 11.0)))
    data = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(CacheFormatError):
        load_table(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(data[:-7])
    with pytest.raises(CacheFormatError):
        load_table(tmp_path / "short.bin")


def test_cached_ball_reuses_file(tmp_path):
    gens = product_schottky()
    a = cached_ball(gens, 4, tmp_path)
    files = list(tmp_path.iterdir())
    b = cached_ball(gens, 4, tmp_path)
    assert len(files) == 1 and list(tmp_path.iterdir()) == files
    assert np.array_equal(a.mu, b.mu)


@pytest.mark.slow
def test_million_row_round_trip_is_bit_exact(tmp_path):
    table = enumerate_ball(product_schottky(), 12)
    assert len(table) > 10**6
    save_table(table, tmp_path / "big.bin")
    back = load_table(tmp_path / "big.bin")
    assert back.mu.tobytes() == table.mu.tobytes()


# --- properties ------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from([1, -1, 2, -2]), max_size=12))
def test_reduce_word_is_reduced_and_idempotent(word):
    r = reduce_word(word)
    assert is_reduced(r) and reduce_word(r) == r


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from([1, -1, 2, -2]), min_size=1, max_size=6))
def test_find_locates_reduced_words(word):
    word = reduce_word(word)
    table = _small_table()
    i = table.find(word)
    assert table.word(i) == word


_CACHE = {}


def _small_table():
    if "t" not in _CACHE:
        _CACHE["t"] = enumerate_ball(rank_one_schottky(), 6)
    return _CACHE["t"]
