"""Memory-aware temporal compression.

Frames are grouped into short windows of ``window_m`` consecutive frames. Each
window is shrunk by repeatedly averaging its most similar consecutive pair
until it meets its budget ``max(1, floor((1 - rho) * len))``. If the
concatenated result still exceeds the overall target, the same pairwise rule
runs once more over the whole sequence.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import NORM_EPS, TokenSequence, ZeroNorm


@dataclass
class CompressConfig:
    rho: float = 0.75
    window_m: int = 4
    target_override: int | None = None
    weighted_merge: bool = False  # count-weighted mean instead of the plain pairwise mean

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.window_m < 1:
            raise ValueError("window_m must be >= 1")
        if self.target_override is not None and self.target_override < 1:
            raise ValueError("target_override must be >= 1")


@dataclass
class CompressReport:
    input_frames: int
    output_frames: int
    input_tokens: int
    output_tokens: int
    window_budgets: list[int] = field(default_factory=list)
    pre_consolidation_frames: int = 0
    target_frames: int = 0
    merges_performed: int = 0
    global_merges_performed: int = 0

    @property
    def token_ratio(self) -> float:
        return self.output_tokens / self.input_tokens

    def to_dict(self) -> dict:
        d = asdict(self)
        d["token_ratio"] = self.token_ratio
        return d


def frame_similarity(a, b) -> float:
    """Mean of patch-aligned cosine similarities between two (P, d) grids."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"grid shapes differ: {a.shape} vs {b.shape}")
    na = np.sqrt((a * a).sum(axis=1))
    nb = np.sqrt((b * b).sum(axis=1))
    bad = np.flatnonzero((na < NORM_EPS) | (nb < NORM_EPS))
    if bad.size:
        raise ZeroNorm(f"zero-norm patch at index {int(bad[0])}")
    cos = np.clip((a * b).sum(axis=1) / (na * nb), -1.0, 1.0)
    return float(cos.mean())


def merge_frames(a, b, wa: float = 1.0, wb: float = 1.0) -> np.ndarray:
    """Average two grids; equal weights give the plain pairwise mean."""
    if wa == wb:
        return 0.5 * (np.asarray(a) + np.asarray(b))
    return (wa * np.asarray(a) + wb * np.asarray(b)) / (wa + wb)


def window_budget(window_len: int, rho: float) -> int:
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    return max(1, math.floor((1.0 - rho) * window_len))


def sequence_target(n_frames: int, cfg: CompressConfig) -> int:
    if cfg.target_override is not None:
        return cfg.target_override
    return max(1, math.floor((1.0 - cfg.rho) * n_frames))


def _merge_down(frames, times, counts, budget, weighted):
    """Greedy consecutive-pair merging with incremental similarity updates.

    Only the two similarities touching the merged slot are recomputed after
    each merge. Returns (frames, times, counts, merges).
    """
    frames = list(frames)
    times = list(times)
    counts = list(counts)
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if len(frames) <= budget:
        return frames, times, counts, 0
    sims = [frame_similarity(frames[t], frames[t + 1]) for t in range(len(frames) - 1)]
    merges = 0
    while len(frames) > budget:
        t = int(np.argmax(sims))  # first maximum: earliest pair wins ties
        wa, wb = (counts[t], counts[t + 1]) if weighted else (1.0, 1.0)
        frames[t] = merge_frames(frames[t], frames[t + 1], wa, wb)
        times[t] = 0.5 * (times[t] + times[t + 1])
        counts[t] = counts[t] + counts[t + 1]
        del frames[t + 1], times[t + 1], counts[t + 1]
        del sims[t]
        if t > 0:
            sims[t - 1] = frame_similarity(frames[t - 1], frames[t])
        if t < len(frames) - 1:
            sims[t] = frame_similarity(frames[t], frames[t + 1])
        merges += 1
    return frames, times, counts, merges


def compress_window(frames, budget: int, weighted: bool = False) -> np.ndarray:
    """Compress a stack of (P, d) frames to ``budget`` frames."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or len(frames) < 1:
        raise ValueError("expected a non-empty (N, P, d) stack")
    out, _, _, _ = _merge_down(frames, np.zeros(len(frames)), [1] * len(frames), budget, weighted)
    return np.stack(out)


def compress_sequence(seq: TokenSequence, cfg: CompressConfig | None = None):
    """Returns (compressed sequence, CompressReport)."""
    cfg = cfg or CompressConfig()
    n = seq.num_frames
    m = cfg.window_m
    frames, times, counts, budgets = [], [], [], []
    merges = 0
    for start in range(0, n, m):
        stop = min(start + m, n)
        budget = window_budget(stop - start, cfg.rho)
        budgets.append(budget)
        f, t, c, k = _merge_down(
            seq.frames[start:stop], seq.timestamps[start:stop], [1] * (stop - start), budget, cfg.weighted_merge
        )
        frames += f
        times += t
        counts += c
        merges += k

    pre = len(frames)
    target = sequence_target(n, cfg)
    global_merges = 0
    if pre > target:
        frames, times, counts, global_merges = _merge_down(frames, times, counts, target, cfg.weighted_merge)

    out = TokenSequence(np.stack(frames), np.asarray(times), seq.grid_hw)
    report = CompressReport(
        input_frames=n,
        output_frames=out.num_frames,
        input_tokens=seq.num_tokens,
        output_tokens=out.num_tokens,
        window_budgets=budgets,
        pre_consolidation_frames=pre,
        target_frames=target,
        merges_performed=merges,
        global_merges_performed=global_merges,
    )
    return out, report
