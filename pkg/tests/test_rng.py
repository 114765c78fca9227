import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from moreau_fl.rng import Domain, RngStream, draw_normal, sample_without_replacement

M64 = (1 << 64) - 1


def philox4x64_10(ctr, key):
    """Reference Philox-4x64 with 10 rounds, written from the Random123 definition."""
    c, k = list(ctr), list(key)
    for r in range(10):
        if r:
            k = [(k[0] + 0x9E3779B97F4A7C15) & M64, (k[1] + 0xBB67AE8584CAA73B) & M64]
        p0 = 0xD2E7470EE14C6C93 * c[0]
        p1 = 0xCA5A826395121157 * c[2]
        c = [(p1 >> 64) ^ c[1] ^ k[0], p1 & M64, (p0 >> 64) ^ c[3] ^ k[1], p0 & M64]
    return c


def reference_word(seed, domain, client, rnd, pos):
    # Word ``pos`` of a stream lives in block pos // 4; the generator
    # advances its counter before producing a block.
    block = philox4x64_10([pos // 4 + 1, 0, rnd, client], [seed, int(domain)])
    return block[pos % 4]


keys = st.tuples(st.integers(0, M64), st.sampled_from(list(Domain)),
                 st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))


@given(keys, st.integers(0, 10_000), st.integers(1, 9))
def test_raw_words_match_reference_philox(key, start, n):
    seed, domain, client, rnd = key
    got = RngStream(seed, domain, client, rnd, counter=start).raw(n)
    want = [reference_word(seed, domain, client, rnd, start + j) for j in range(n)]
    assert [int(v) for v in got] == want


def test_frozen_words():
    # [DERIVED] from the reference implementation above.
    got = RngStream(7, Domain.BATCH, client=5, round=2).raw(4)
    assert [int(v) for v in got] == [16401662985611125562, 11526756629703630247,
                                     8323039119594030953, 16598723975855127627]


@given(keys, st.integers(0, 50), st.integers(1, 50))
def test_output_depends_only_on_key_and_counter(key, c, n):
    whole = RngStream(*key).raw(c + n)
    np.testing.assert_array_equal(RngStream(*key, counter=c).raw(n), whole[c:])
    # Chunked reads equal one big read.
    s = RngStream(*key)
    parts = [s.raw(1) for _ in range(c + n)]
    np.testing.assert_array_equal(np.concatenate(parts), whole)
    assert s.counter == c + n


def test_distinct_keys_give_distinct_streams():
    base = RngStream(1, Domain.BATCH, 2, 3).raw(8)
    for other in [RngStream(2, Domain.BATCH, 2, 3), RngStream(1, Domain.INIT, 2, 3),
                  RngStream(1, Domain.BATCH, 3, 3), RngStream(1, Domain.BATCH, 2, 4)]:
        assert not np.array_equal(other.raw(8), base)


def test_streams_are_uncorrelated():
    a = RngStream(0, Domain.BATCH, 0, 0).uniform(200_000)
    b = RngStream(0, Domain.BATCH, 1, 0).uniform(200_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01


def test_uniform_is_top_53_bits():
    words = RngStream(9, Domain.DATA_GEN).raw(100)
    u = RngStream(9, Domain.DATA_GEN).uniform(100)
    assert u.min() >= 0 and u.max() < 1
    assert [float(x) for x in u] == [(int(w) >> 11) / 2.0**53 for w in words]


def test_normal_is_box_muller_of_uniform_pairs():
    u = RngStream(4, Domain.INIT).uniform(10)
    z = RngStream(4, Domain.INIT).normal(9)
    ref = []
    for u1, u2 in zip(u[::2], u[1::2]):
        r = math.sqrt(-2.0 * math.log(1.0 - u1))
        ref += [r * math.cos(2 * math.pi * u2), r * math.sin(2 * math.pi * u2)]
    np.testing.assert_allclose(z, ref[:9], rtol=1e-14, atol=1e-15)


def test_draw_normal_examples():
    s = RngStream(0, Domain.DATA_GEN)
    np.testing.assert_array_equal(draw_normal(3.0, 0.0, 4, s), [3, 3, 3, 3])
    with pytest.raises(ValueError):
        draw_normal(0.0, -1.0, 3, s)
    a = draw_normal(1.0, 2.0, 50, RngStream(5, Domain.DATA_GEN, 1, 1, counter=7))
    b = draw_normal(1.0, 2.0, 50, RngStream(5, Domain.DATA_GEN, 1, 1, counter=7))
    np.testing.assert_array_equal(a, b)


def test_draw_normal_moments_at_one_million():
    z = draw_normal(0.0, 1.0, 10**6, RngStream(123, Domain.DATA_GEN))
    assert abs(z.mean()) <= 0.005
    assert abs(z.var(ddof=1) - 1.0) <= 0.01
    assert stats.kstest(z[:100_000], "norm").pvalue > 1e-3


def test_permutation_is_a_permutation():
    for n in (1, 2, 17, 1000):
        p = RngStream(n, Domain.SPLIT).permutation(n)
        assert sorted(p.tolist()) == list(range(n))


def test_sample_without_replacement_examples():
    s = RngStream(0, Domain.CLIENT_SAMPLE)
    assert sample_without_replacement(5, 5, s).tolist() == [0, 1, 2, 3, 4]
    assert sample_without_replacement(1, 1, s).tolist() == [0]
    for n, k in [(3, 4), (3, 0), (0, 0)]:
        with pytest.raises(ValueError):
            sample_without_replacement(n, k, s)


@given(st.integers(1, 30).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n))),
       st.integers(0, 2**32 - 1))
def test_sample_is_sorted_distinct_in_range(nk, r):
    n, k = nk
    out = sample_without_replacement(n, k, RngStream(1, Domain.CLIENT_SAMPLE, round=r))
    assert len(set(out.tolist())) == k == out.size
    assert np.all(np.diff(out) > 0) if k > 1 else True
    assert out.min() >= 0 and out.max() < n


def test_subsets_equiprobable_n4_k2():
    # [DERIVED] all 6 subsets of a 4-set, 200000 draws, frequency 1/6 +- 0.005.
    draws = 200_000
    s = RngStream(2024, Domain.CLIENT_SAMPLE)
    counts = {c: 0 for c in itertools.combinations(range(4), 2)}
    keys = np.argsort(s.raw(4 * draws).reshape(draws, 4), axis=1, kind="stable")[:, :2]
    keys.sort(axis=1)
    for pair, n in zip(*np.unique(keys, axis=0, return_counts=True)):
        counts[tuple(pair)] = n
    # The vectorized path above must agree with the public function.
    s2 = RngStream(2024, Domain.CLIENT_SAMPLE)
    assert [tuple(sample_without_replacement(4, 2, s2)) for _ in range(5)] == [tuple(k) for k in keys[:5]]
    freqs = np.array(list(counts.values())) / draws
    assert np.all(np.abs(freqs - 1 / 6) <= 0.005)
    assert stats.chisquare(list(counts.values())).pvalue > 1e-4
