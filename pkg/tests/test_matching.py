"""Tests for Hamming distances and brute-force matching."""
import time

import numpy as np
import pytest

from mdbrief.bitops import pack_bits, popcount, unpack_bits
from mdbrief.matching import (
    distance_matrix,
    hamming,
    masked_hamming,
    match_brute_force,
    write_matches,
)
from mdbrief_helpers import descriptor, flip_bits, random_descriptors


def test_popcount_and_packing():
    bits = np.array([[1, 0, 1, 1, 0, 0, 0, 0, 1, 1]], dtype=bool)
    packed = pack_bits(bits)
    assert packed.shape == (1, 2)
    assert popcount(packed).tolist() == [5]
    assert np.array_equal(unpack_bits(packed, 10), bits)


def test_hamming_counts_differences():
    a = descriptor([1, 0, 1, 0, 1, 0, 1, 0, 1])
    b = flip_bits(a, [0, 4, 8])
    assert hamming(a, a) == 0
    assert hamming(a, b) == 3
    assert hamming(b, a) == 3


def test_hamming_dimension_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        hamming(descriptor([1] * 8), descriptor([1] * 16))


def test_masked_hamming_normalizes_by_each_mask():
    # differences at bits 0 and 1; mask i keeps bits 0..3, mask j keeps bits 0 and 4..7
    a = descriptor([1, 1, 0, 0, 0, 0, 0, 0], mask=[1, 1, 1, 1, 0, 0, 0, 0])
    b = descriptor([0, 0, 0, 0, 0, 0, 0, 0], mask=[1, 0, 0, 0, 1, 1, 1, 1])
    assert masked_hamming(a, b) == pytest.approx(2 / 4 + 1 / 5)
    assert masked_hamming(b, a) == pytest.approx(masked_hamming(a, b))


def test_masked_hamming_range():
    a = descriptor([1] * 16, mask=[1] * 16)
    b = descriptor([0] * 16, mask=[1] * 8 + [0] * 8)
    assert masked_hamming(a, a) == 0.0
    assert masked_hamming(a, b) == pytest.approx(2.0)


def test_masked_hamming_needs_masks():
    with pytest.raises(ValueError, match="masks"):
        masked_hamming(descriptor([1] * 8), descriptor([1] * 8, mask=[1] * 8))


def test_distance_matrix_matches_pairwise():
    left = random_descriptors(7, dim=40, seed=1, masked=True)
    right = random_descriptors(5, dim=40, seed=2, masked=True)
    plain = distance_matrix(left, right)
    masked = distance_matrix(left, right, masked=True, threads=3)
    assert plain.dtype == np.int64
    for i, a in enumerate(left):
        for j, b in enumerate(right):
            assert plain[i, j] == hamming(a, b)
            assert masked[i, j] == pytest.approx(masked_hamming(a, b))


def test_matching_recovers_perturbed_copies():
    train = random_descriptors(20, dim=128, seed=3)
    query = [flip_bits(d, [k % 128, (k * 7) % 128]) for k, d in enumerate(train)]
    matches = match_brute_force(query, train)
    assert [(m.index_i, m.index_j) for m in matches] == [(k, k) for k in range(20)]
    assert all(m.distance <= 2 for m in matches)


def test_threshold_filters_matches():
    train = random_descriptors(10, dim=64, seed=4)
    query = [train[0], flip_bits(train[1], range(10))]
    matches = match_brute_force(query, train, threshold=5)
    assert [(m.index_i, m.index_j, m.distance) for m in matches] == [(0, 0, 0)]


def test_ties_pick_lowest_index():
    d = descriptor([1, 0] * 8)
    matches = match_brute_force([d], [descriptor([0] * 16), d, d])
    assert matches[0].index_j == 1


def test_cross_check_drops_one_sided_matches():
    a = descriptor([0] * 16)
    b = descriptor([0] * 15 + [1])
    # both queries prefer train 0, which prefers query 0
    matches = match_brute_force([a, b], [a], cross_check=True)
    assert [(m.index_i, m.index_j) for m in matches] == [(0, 0)]
    assert len(match_brute_force([a, b], [a])) == 2


def test_mixed_sets_rejected():
    plain = random_descriptors(2, dim=16)
    masked = random_descriptors(2, dim=16, masked=True)
    with pytest.raises(ValueError, match="masked"):
        match_brute_force(plain, masked)
    with pytest.raises(ValueError):
        match_brute_force(plain, [])
    with pytest.raises(ValueError, match="no masks"):
        match_brute_force(plain, plain, masked=True)


def test_masked_hamming_with_full_masks_is_scaled_hamming():
    rng = np.random.default_rng(21)
    ones = [True] * 64
    for _ in range(10000):
        a = descriptor(rng.random(64) < 0.5, mask=ones)
        b = descriptor(rng.random(64) < 0.5, mask=ones)
        assert masked_hamming(a, b) == 2 * hamming(a, b) / 64


@pytest.mark.parametrize("bits_a,mask_b,expected", [
    # one difference, seen by a's 4-bit mask only
    ([1, 0, 0, 0, 0, 0, 0, 0], [0, 0, 0, 0, 1, 1, 1, 1], 0.25),
    # one difference on each side of the split masks
    ([1, 0, 0, 0, 1, 0, 0, 0], [0, 0, 0, 0, 1, 1, 1, 1], 0.5),
])
def test_masked_hamming_worked_examples(bits_a, mask_b, expected):
    a = descriptor(bits_a, mask=[1, 1, 1, 1, 0, 0, 0, 0])
    b = descriptor([0] * 8, mask=mask_b)
    assert masked_hamming(a, b) == expected


def test_hamming_triangle_inequality():
    descs = random_descriptors(30, dim=48, seed=22)
    for a in descs[:10]:
        for b in descs[10:20]:
            for c in descs[20:]:
                assert hamming(a, c) <= hamming(a, b) + hamming(b, c)


def reference_matches(set_i, set_j, masked, cross_check):
    dist_fn = masked_hamming if masked else hamming

    def nearest(queries, train):
        out = []
        for q in queries:
            best, best_j = None, -1
            for j, t in enumerate(train):
                d = dist_fn(q, t)
                if best is None or d < best:
                    best, best_j = d, j
            out.append((best_j, best))
        return out

    forward = nearest(set_i, set_j)
    backward = nearest(set_j, set_i) if cross_check else None
    result = []
    for i, (j, d) in enumerate(forward):
        if cross_check and backward[j][0] != i:
            continue
        result.append((i, j, d))
    return result


def test_brute_force_matches_exhaustive_reference():
    rng = np.random.default_rng(23)
    for trial in range(100):
        masked = trial % 4 == 3
        cross_check = trial % 2 == 1
        # short descriptors so that ties are frequent
        n_i, n_j = (int(n) for n in rng.integers(1, 51, 2))
        set_i = random_descriptors(n_i, dim=12, seed=1000 + trial, masked=masked)
        set_j = random_descriptors(n_j, dim=12, seed=2000 + trial, masked=masked)
        got = match_brute_force(set_i, set_j, masked=masked, cross_check=cross_check)
        expected = reference_matches(set_i, set_j, masked, cross_check)
        assert [(m.index_i, m.index_j, m.distance) for m in got] == expected


def test_write_matches(tmp_path):
    train = random_descriptors(3, dim=16, seed=5, masked=True)
    matches = match_brute_force(train, train, masked=True)
    path = tmp_path / "m.csv"
    write_matches(path, matches)
    lines = path.read_text().splitlines()
    assert lines[0] == "index_i,index_j,distance"
    assert lines[1] == "0,0,0.0"


@pytest.mark.benchmark
def test_brute_force_throughput():
    query = random_descriptors(1000, dim=256, seed=11)
    train = random_descriptors(1000, dim=256, seed=12)
    best = float("inf")
    for _ in range(3):
        start = time.perf_counter()
        matches = match_brute_force(query, train, threads=1)
        best = min(best, time.perf_counter() - start)
    assert len(matches) == 1000
    assert best < 0.5
