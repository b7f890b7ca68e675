import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_compress
from retcomp.compressor import (
    CompressConfig,
    compress_sequence,
    compress_window,
    frame_similarity,
    merge_frames,
    window_budget,
)
from retcomp.core import TokenSequence, ZeroNorm


def make_seq(frames):
    frames = np.asarray(frames, dtype=np.float64)
    return TokenSequence(frames, np.arange(len(frames), dtype=np.float64))


def test_frame_similarity_examples():
    a = np.array([[1.0, 2.0], [-3.0, 0.5]])
    assert frame_similarity(a, a) == pytest.approx(1.0, abs=1e-15)
    assert frame_similarity(a, -a) == pytest.approx(-1.0, abs=1e-15)
    assert frame_similarity([[1, 0], [0, 1]], [[0, 1], [1, 0]]) == 0.0


def test_frame_similarity_reports_zero_patch():
    with pytest.raises(ZeroNorm, match="index 1"):
        frame_similarity([[1, 0], [0, 0]], [[1, 0], [1, 0]])


def test_merge_frames_examples():
    np.testing.assert_array_equal(merge_frames(np.zeros((2, 3)), np.full((2, 3), 2.0)), np.ones((2, 3)))
    a = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(merge_frames(a, a), a)
    x, y, z = np.zeros((1, 1)), np.full((1, 1), 2.0), np.full((1, 1), 4.0)
    assert merge_frames(merge_frames(x, y), z)[0, 0] == 2.5


@pytest.mark.parametrize("n, rho, expected", [(8, 0.75, 2), (2, 0.9, 1), (4, 0.5, 2)])
def test_window_budget(n, rho, expected):
    assert window_budget(n, rho) == expected


def test_compress_window_identical_frames():
    a = np.random.default_rng(0).standard_normal((3, 5))
    out = compress_window(np.stack([a] * 4), 1)
    np.testing.assert_array_equal(out, a[None])


def test_compress_window_merges_most_similar_pair():
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    B = np.array([[0.0, 1.0], [1.0, 1.0]])
    out = compress_window(np.stack([A, A, B]), 2)
    np.testing.assert_array_equal(out, np.stack([A, B]))


def test_compress_window_short_input_unchanged():
    f = np.random.default_rng(1).standard_normal((3, 2, 4))
    np.testing.assert_array_equal(compress_window(f, 5), f)


def test_compress_window_matches_naive_8_to_3():
    f = np.random.default_rng(2).standard_normal((8, 4, 6))
    np.testing.assert_array_equal(compress_window(f, 3), naive_compress(f, 3))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 32), st.integers(1, 8), st.integers(1, 16), st.integers(0, 2**32 - 1), st.data())
def test_incremental_equals_naive(n, p, d, seed, data):
    budget = data.draw(st.integers(1, n))
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((n, p, d))
    if data.draw(st.booleans()):
        # planted duplicates create exact similarity ties
        f[rng.integers(0, n, size=n // 2)] = f[0]
    assert np.array_equal(compress_window(f, budget), naive_compress(f, budget))


def test_sequence_example_no_global_merge():
    f = np.random.default_rng(3).standard_normal((4, 2, 3))
    out, rep = compress_sequence(make_seq(f), CompressConfig(rho=0.5, window_m=2))
    assert rep.window_budgets == [1, 1]
    assert rep.pre_consolidation_frames == 2 and rep.target_frames == 2
    assert rep.global_merges_performed == 0 and out.num_frames == 2
    np.testing.assert_array_equal(out.frames[0], 0.5 * (f[0] + f[1]))
    assert out.timestamps.tolist() == [0.5, 2.5]


def test_sequence_example_forced_consolidation():
    f = np.random.default_rng(4).standard_normal((6, 2, 3))
    out, rep = compress_sequence(make_seq(f), CompressConfig(rho=0.9, window_m=2))
    assert rep.window_budgets == [1, 1, 1]
    assert rep.pre_consolidation_frames == 3
    assert rep.target_frames == 1
    assert rep.global_merges_performed == 2
    assert out.num_frames == 1 and out.grid_meta == (1, 1, 2)


def test_single_frame_target_on_64_frames():
    f = np.random.default_rng(5).standard_normal((64, 4, 8))
    out, rep = compress_sequence(make_seq(f), CompressConfig(rho=0.75, window_m=4, target_override=1))
    assert out.num_frames == 1
    assert rep.input_tokens == 256 and rep.output_tokens == 4
    assert rep.output_tokens * 64 == rep.input_tokens


@settings(max_examples=150, deadline=None)
@given(
    st.integers(1, 40),
    st.integers(1, 10),
    st.floats(0.01, 0.99),
    st.integers(0, 2**32 - 1),
    st.booleans(),
)
def test_sequence_properties(n, m, rho, seed, weighted):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((n, 2, 3))
    seq = make_seq(f)
    cfg = CompressConfig(rho=rho, window_m=m, weighted_merge=weighted)
    out, rep = compress_sequence(seq, cfg)
    sizes = [min(m, n - s) for s in range(0, n, m)]
    assert rep.window_budgets == [max(1, math.floor((1 - rho) * s)) for s in sizes]
    assert rep.merges_performed + rep.pre_consolidation_frames == n
    assert out.num_frames == min(rep.pre_consolidation_frames, rep.target_frames)
    assert rep.output_tokens == out.num_frames * 2 and rep.input_tokens == n * 2
    # means never leave the per-position input range
    assert np.all(out.frames <= f.max(axis=0))
    assert np.all(out.frames >= f.min(axis=0))
    assert np.all(np.diff(out.timestamps) > 0)
    out2, rep2 = compress_sequence(seq, cfg)
    assert out2.frames.tobytes() == out.frames.tobytes() and rep2 == rep


def test_identity_when_budget_covers_everything():
    f = np.random.default_rng(6).standard_normal((5, 3, 2))
    seq = make_seq(f)
    out, rep = compress_sequence(seq, CompressConfig(rho=0.01, window_m=1, target_override=5))
    assert out.frames.tobytes() == seq.frames.tobytes()
    assert out.timestamps.tobytes() == seq.timestamps.tobytes()
    assert rep.merges_performed == 0 and rep.global_merges_performed == 0


def test_weighted_merge_is_running_mean():
    f = np.array([0.0, 2.0, 4.0])[:, None, None] * np.ones((3, 1, 1)) + 1.0
    out, _ = compress_sequence(make_seq(f), CompressConfig(rho=0.5, window_m=3, target_override=1, weighted_merge=True))
    assert out.frames[0, 0, 0] == pytest.approx(3.0)
