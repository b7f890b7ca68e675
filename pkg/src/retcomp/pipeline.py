"""Retrieve-then-compress: segment a video, bank its fragments, pull the
query-relevant ones, and compress them to the frame budget."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compressor import CompressConfig, CompressReport, compress_sequence
from .core import TokenSequence
from .synth import QASample
from .vmr import (
    MemoryBank,
    RetrievalResult,
    SegmentConfig,
    assemble_retrieved,
    embed_fragment,
    embed_query,
    retrieve_topk,
    sample_fps,
    segment_events,
)


@dataclass
class RetrievalConfig:
    top_k: int = 3
    order: str = "chronological"
    fps: float = 1.0
    max_frames: int = 64

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.order not in ("chronological", "rank"):
            raise ValueError("order must be 'chronological' or 'rank'")
        if self.fps <= 0 or self.max_frames < 1:
            raise ValueError("fps must be > 0 and max_frames >= 1")


@dataclass
class PipelineOutput:
    full: TokenSequence  # teacher input: fps-sampled, capped video
    retrieved: TokenSequence
    compressed: TokenSequence
    bank: MemoryBank
    result: RetrievalResult
    report: CompressReport


def run_sample(
    sample: QASample,
    seg_cfg: SegmentConfig,
    ret_cfg: RetrievalConfig,
    comp_cfg: CompressConfig,
    video_id: int = 0,
) -> PipelineOutput:
    video = sample.video
    frags = segment_events(video, seg_cfg, video_id=video_id)
    for f in frags:
        f.embedding = embed_fragment(video, f)
    bank = MemoryBank(video.dim, frags)
    result = retrieve_topk(bank, embed_query(sample.query), ret_cfg.top_k)
    retrieved = assemble_retrieved(video, result, bank, ret_cfg.order, ret_cfg.fps, ret_cfg.max_frames)
    compressed, report = compress_sequence(retrieved, comp_cfg)
    full = sample_fps(video, ret_cfg.fps, ret_cfg.max_frames)
    return PipelineOutput(full, retrieved, compressed, bank, result, report)


def sample_report(index: int, sample: QASample, out: PipelineOutput) -> dict:
    spans = [out.bank.get(fid) for fid in out.result.ids]
    return {
        "index": index,
        "answer": sample.answer,
        "fragments": len(out.bank),
        "retrieved": [
            {"fragment_id": fid, "score": score, "start_frame": f.start_frame, "end_frame": f.end_frame}
            for (fid, score), f in zip(out.result.ranked, spans)
        ],
        "retrieved_source_frames": out.retrieved.source_frames.tolist(),
        "full_frames": out.full.num_frames,
        "compress": out.report.to_dict(),
        "grid_meta": list(out.compressed.grid_meta),
    }


def prepare_features(samples, seg_cfg, ret_cfg, comp_cfg):
    """Policy features for both branches: arrays (n, d) full, (n, d) compressed, answers."""
    from .cgrpo import features

    full, comp = [], []
    for i, s in enumerate(samples):
        out = run_sample(s, seg_cfg, ret_cfg, comp_cfg, video_id=i)
        full.append(features(out.full))
        comp.append(features(out.compressed))
    answers = np.array([s.answer for s in samples], dtype=np.int64)
    return np.array(full), np.array(comp), answers
