import math

import numpy as np
import pytest

from retcomp.cgrpo import ToyPolicy
from retcomp.compressor import CompressConfig, frame_similarity
from retcomp.core import BadMagic, TruncatedFile, VersionMismatch, make_rng
from retcomp.pipeline import RetrievalConfig, run_sample
from retcomp.synth import (
    SynthConfig,
    coherence,
    dataset_from_bytes,
    dataset_to_bytes,
    eval_accuracy,
    gen_dataset,
    gen_prototypes,
    gen_video,
    load_dataset,
    manifest,
    save_dataset,
)
from retcomp.vmr import SegmentConfig, boundary_scores, segment_events


def test_prototypes_orthonormal():
    p = gen_prototypes(2, 4, make_rng(0))
    np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0, atol=1e-12)
    assert abs(p[0] @ p[1]) < 1e-9
    single = gen_prototypes(1, 5, make_rng(0))
    assert single.shape == (1, 5) and np.linalg.norm(single) == pytest.approx(1.0)


def test_prototypes_seeded():
    a = gen_prototypes(4, 16, make_rng(1))
    assert np.array_equal(a, gen_prototypes(4, 16, make_rng(1)))
    assert not np.allclose(a, gen_prototypes(4, 16, make_rng(2)))


def test_prototypes_overcomplete():
    p = gen_prototypes(10, 3, make_rng(0))
    np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0)
    assert 0 < coherence(p) <= 1.0


def test_noise_free_video():
    cfg = SynthConfig(noise_sigma=0.0)
    rng = make_rng(4)
    s = gen_video(cfg, gen_prototypes(cfg.num_classes, cfg.dim, rng), rng)
    f = s.video.frames
    starts = [0] + s.planted_boundaries
    ends = s.planted_boundaries + [len(f)]
    for a, b in zip(starts, ends):
        for t in range(a, b - 1):
            assert frame_similarity(f[t], f[t + 1]) == pytest.approx(1.0, abs=1e-15)
    scores = boundary_scores(s.video)
    for t in s.planted_boundaries:
        assert scores[t - 1] == pytest.approx(1.0, abs=1e-12)
    assert all(a != b for a, b in zip(s.per_event_classes, s.per_event_classes[1:]))
    assert s.answer == s.per_event_classes[s.target_event]


def test_planted_boundaries_recovered():
    cfg = SynthConfig(events_per_video=6, noise_sigma=0.05)
    rng = make_rng(0, "data")
    s = gen_video(cfg, gen_prototypes(cfg.num_classes, cfg.dim, rng), rng)
    found = [f.start_frame for f in segment_events(s.video, SegmentConfig(mad_k=3.0))[1:]]
    assert found == s.planted_boundaries


def test_similarity_margin_between_events():
    cfg = SynthConfig(noise_sigma=0.05)
    rng = make_rng(5)
    protos = gen_prototypes(cfg.num_classes, cfg.dim, rng)
    for _ in range(10):
        s = gen_video(cfg, protos, rng)
        f = s.video.frames
        starts = set(s.planted_boundaries)
        intra = [frame_similarity(f[t], f[t + 1]) for t in range(len(f) - 1) if t + 1 not in starts]
        inter = [frame_similarity(f[t - 1], f[t]) for t in starts]
        assert min(intra) - max(inter) >= 0.5


def test_generation_is_pure():
    cfg = SynthConfig(num_samples=5)
    _, a = gen_dataset(cfg, make_rng(9, "data"))
    _, b = gen_dataset(cfg, make_rng(9, "data"))
    assert a == b
    assert dataset_to_bytes(a) == dataset_to_bytes(b)


def test_oracle_policy_full_accuracy():
    cfg = SynthConfig(events_per_video=1, noise_sigma=0.0, num_samples=40)
    protos, samples = gen_dataset(cfg, make_rng(1))
    oracle = ToyPolicy(protos.copy(), np.zeros(cfg.num_classes))
    full = [s.video for s in samples]
    assert eval_accuracy(oracle, full, [s.answer for s in samples]) == 1.0


def test_single_event_compression_is_lossless():
    cfg = SynthConfig(events_per_video=1, noise_sigma=0.0, num_samples=20)
    protos, samples = gen_dataset(cfg, make_rng(2))
    oracle = ToyPolicy(protos.copy(), np.zeros(cfg.num_classes))
    comp_cfg = CompressConfig(rho=0.75, window_m=4, target_override=1)
    outs = [run_sample(s, SegmentConfig(), RetrievalConfig(), comp_cfg) for s in samples]
    for s, out in zip(samples, outs):
        assert out.compressed.num_frames == 1
        np.testing.assert_allclose(out.compressed.frames[0], np.tile(protos[s.answer], (cfg.patches, 1)), atol=1e-15)
    answers = [s.answer for s in samples]
    acc_full = eval_accuracy(oracle, [o.full for o in outs], answers)
    acc_comp = eval_accuracy(oracle, [o.compressed for o in outs], answers)
    assert acc_full == acc_comp == 1.0


def test_uniform_policy_accuracy_near_chance():
    C, n = 4, 2000
    rng = np.random.default_rng(0)
    xs = list(rng.standard_normal((n, 8)))
    answers = rng.integers(0, C, size=n)
    uniform = ToyPolicy(np.zeros((C, 8)), np.zeros(C))
    acc = eval_accuracy(uniform, xs, answers, argmax=False, rng=make_rng(3, "eval"))
    bound = 3 * math.sqrt(0.25 * 0.75 / n)
    assert abs(acc - 1 / C) <= bound


def test_eval_needs_samples():
    with pytest.raises(ValueError):
        eval_accuracy(ToyPolicy(np.zeros((2, 2)), np.zeros(2)), [], [])


def test_dataset_round_trip(tmp_path):
    cfg = SynthConfig(num_samples=7, patches=4)
    _, samples = gen_dataset(cfg, make_rng(3, "data"))
    path = tmp_path / "d.marcdata"
    save_dataset(samples, path, cfg, 3, manifest_path=tmp_path / "d.json")
    assert load_dataset(path) == samples
    man = manifest(samples, cfg, 3)
    assert man["num_samples"] == 7 and len(man["samples"]) == 7
    assert man["samples"][0]["per_event_classes"] == samples[0].per_event_classes


def test_dataset_corruption():
    _, samples = gen_dataset(SynthConfig(num_samples=2), make_rng(0))
    data = dataset_to_bytes(samples)
    with pytest.raises(BadMagic):
        dataset_from_bytes(b"NOTADATA" + data[8:])
    with pytest.raises(VersionMismatch):
        dataset_from_bytes(data[:8] + (9).to_bytes(4, "little") + data[12:])
    with pytest.raises(TruncatedFile):
        dataset_from_bytes(data[:-1])
    with pytest.raises(TruncatedFile):
        dataset_from_bytes(data + b"\0")
