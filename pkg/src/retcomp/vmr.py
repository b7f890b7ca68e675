"""Visual memory retrieval: event segmentation, fragment embedding, memory bank,
exact top-k search, and reassembly of the retrieved frames.

The boundary detector and embedder here are lightweight stand-ins. Anything
with the same call signature (``segmenter(seq, cfg, ...)`` returning fragments,
``embedder(seq, fragment)`` returning a unit vector) can be swapped in.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import (
    BadMagic,
    DimMismatch,
    EmptyBank,
    EmptySequence,
    TokenSequence,
    TruncatedFile,
    VersionMismatch,
    ZeroNorm,
    NORM_EPS,
    cosine,
    unit,
)

BANK_MAGIC = b"MARCBANK"
BANK_VERSION = 1
_BANK_HEADER = struct.Struct("<8sIII")
_BANK_RECORD_META = struct.Struct("<QQQQdd")

# adaptive thresholds never drop below this, so rounding noise on identical
# frames (b_t ~ 1e-16) cannot open a boundary
MIN_ADAPTIVE_THRESHOLD = 1e-9
MAD_SCALE = 1.4826


@dataclass
class SegmentConfig:
    threshold_mode: str = "adaptive"  # "adaptive" | "fixed"
    fixed_threshold: float = 0.5
    mad_k: float = 3.0
    min_event_len: int = 2

    def __post_init__(self):
        if self.threshold_mode not in ("adaptive", "fixed"):
            raise ValueError(f"threshold_mode must be 'adaptive' or 'fixed', got {self.threshold_mode!r}")
        if self.min_event_len < 1:
            raise ValueError("min_event_len must be >= 1")
        if self.mad_k < 0:
            raise ValueError("mad_k must be >= 0")


@dataclass
class MemoryFragment:
    fragment_id: int
    video_id: int
    start_frame: int  # inclusive, 0-based
    end_frame: int  # inclusive
    start_time: float
    end_time: float
    embedding: np.ndarray | None = None

    @property
    def length(self) -> int:
        return self.end_frame - self.start_frame + 1

    def __eq__(self, other):
        if not isinstance(other, MemoryFragment):
            return NotImplemented
        same_meta = (
            self.fragment_id == other.fragment_id
            and self.video_id == other.video_id
            and self.start_frame == other.start_frame
            and self.end_frame == other.end_frame
            and self.start_time == other.start_time
            and self.end_time == other.end_time
        )
        if not same_meta:
            return False
        if self.embedding is None or other.embedding is None:
            return self.embedding is None and other.embedding is None
        return np.array_equal(self.embedding, other.embedding)


@dataclass
class MemoryBank:
    dim: int
    fragments: list[MemoryFragment] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for frag in self.fragments:
            self._check(frag, seen)
            seen.add(frag.fragment_id)
        self._refresh()

    def _check(self, frag, seen):
        if frag.embedding is None or frag.embedding.shape != (self.dim,):
            raise DimMismatch(f"fragment {frag.fragment_id} embedding does not have dim {self.dim}")
        if frag.fragment_id in seen:
            raise ValueError(f"duplicate fragment_id {frag.fragment_id}")

    def _refresh(self):
        if self.fragments:
            self._matrix = np.stack([f.embedding for f in self.fragments])
        else:
            self._matrix = np.zeros((0, self.dim))
        self._ids = np.array([f.fragment_id for f in self.fragments], dtype=np.int64)
        self._by_id = {f.fragment_id: f for f in self.fragments}

    def add(self, frag: MemoryFragment) -> None:
        self._check(frag, self._by_id)
        self.fragments.append(frag)
        self._refresh()

    def extend(self, frags) -> None:
        for frag in frags:
            self._check(frag, self._by_id)
            self._by_id[frag.fragment_id] = frag
            self.fragments.append(frag)
        self._refresh()

    def __len__(self):
        return len(self.fragments)

    def get(self, fragment_id: int) -> MemoryFragment:
        return self._by_id[fragment_id]

    @property
    def source_index(self) -> dict[int, tuple[int, int, int]]:
        """fragment_id -> (video_id, start_frame, end_frame)."""
        return {f.fragment_id: (f.video_id, f.start_frame, f.end_frame) for f in self.fragments}

    @property
    def embeddings(self) -> np.ndarray:
        return self._matrix

    @property
    def ids(self) -> np.ndarray:
        return self._ids

    def __eq__(self, other):
        if not isinstance(other, MemoryBank):
            return NotImplemented
        return self.dim == other.dim and self.fragments == other.fragments


@dataclass
class RetrievalResult:
    ranked: list[tuple[int, float]]
    k_requested: int

    @property
    def ids(self) -> list[int]:
        return [fid for fid, _ in self.ranked]


def boundary_scores(seq: TokenSequence) -> np.ndarray:
    """b_t = 1 - cos(pool(frame_t), pool(frame_t+1)) for consecutive frames."""
    pooled = seq.frames.mean(axis=1)
    return np.array([1.0 - cosine(pooled[t], pooled[t + 1]) for t in range(len(pooled) - 1)])


def boundary_threshold(scores: np.ndarray, cfg: SegmentConfig) -> float:
    if cfg.threshold_mode == "fixed":
        return float(cfg.fixed_threshold)
    if scores.size == 0:
        return np.inf
    med = float(np.median(scores))
    mad = MAD_SCALE * float(np.median(np.abs(scores - med)))
    return max(med + cfg.mad_k * mad, MIN_ADAPTIVE_THRESHOLD)


def segment_events(
    seq: TokenSequence,
    cfg: SegmentConfig | None = None,
    video_id: int = 0,
    first_id: int = 0,
) -> list[MemoryFragment]:
    """Split a sequence into contiguous event fragments (embeddings unset).

    A boundary opens after frame t when its boundary score exceeds the
    threshold. Events shorter than ``cfg.min_event_len`` are folded into the
    preceding event; a short leading event is folded into the next one.
    """
    if seq is None or seq.num_frames < 1:
        raise EmptySequence("cannot segment an empty sequence")
    cfg = cfg or SegmentConfig()
    n = seq.num_frames
    scores = boundary_scores(seq)
    theta = boundary_threshold(scores, cfg)
    starts = [0] + [t + 1 for t in range(n - 1) if scores[t] > theta]

    spans = [[s, e - 1] for s, e in zip(starts, starts[1:] + [n])]
    merged: list[list[int]] = []
    for span in spans:
        if merged and span[1] - span[0] + 1 < cfg.min_event_len:
            merged[-1][1] = span[1]
        else:
            merged.append(span)
    if len(merged) > 1 and merged[0][1] - merged[0][0] + 1 < cfg.min_event_len:
        merged[1][0] = merged[0][0]
        merged.pop(0)

    ts = seq.timestamps
    return [
        MemoryFragment(first_id + i, video_id, s, e, float(ts[s]), float(ts[e]))
        for i, (s, e) in enumerate(merged)
    ]


def embed_fragment(seq: TokenSequence, frag: MemoryFragment) -> np.ndarray:
    if not (0 <= frag.start_frame <= frag.end_frame < seq.num_frames):
        raise ValueError(f"fragment span [{frag.start_frame}, {frag.end_frame}] outside sequence")
    pooled = seq.frames[frag.start_frame : frag.end_frame + 1].mean(axis=1)
    return unit(pooled.mean(axis=0))


def embed_query(q) -> np.ndarray:
    return unit(q)


def build_bank(
    videos,
    cfg: SegmentConfig | None = None,
    segmenter: Callable = segment_events,
    embedder: Callable = embed_fragment,
) -> MemoryBank:
    """Segment and embed each (video_id, seq) pair into a single bank."""
    fragments = []
    dim = None
    for video_id, seq in videos:
        for frag in segmenter(seq, cfg, video_id=video_id, first_id=len(fragments)):
            frag.embedding = embedder(seq, frag)
            fragments.append(frag)
        dim = seq.dim
    if dim is None:
        raise EmptySequence("no videos given")
    return MemoryBank(dim, fragments)


def retrieve_topk(bank: MemoryBank, query, k: int = 3) -> RetrievalResult:
    """Exact top-k by cosine; ties go to the smaller fragment_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(bank) == 0:
        raise EmptyBank("cannot search an empty bank")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (bank.dim,):
        raise DimMismatch(f"query has shape {query.shape}, bank dim is {bank.dim}")
    qn = np.linalg.norm(query)
    if qn < NORM_EPS:
        raise ZeroNorm("zero-norm query")
    scores = (bank.embeddings * query).sum(axis=1) / qn
    scores = np.clip(scores, -1.0, 1.0)
    order = np.lexsort((bank.ids, -scores))[: min(k, len(bank))]
    return RetrievalResult([(int(bank.ids[i]), float(scores[i])) for i in order], k)


def _resample_span(times: np.ndarray, fps: float) -> list[int]:
    """Greedy keep: first frame, then each frame at least 1/fps after the last kept."""
    gap = 1.0 / fps
    keep = [0]
    for i in range(1, len(times)):
        if times[i] - times[keep[-1]] >= gap - 1e-9:
            keep.append(i)
    return keep


def cap_indices(n: int, max_frames: int) -> np.ndarray:
    """Uniformly subsample range(n) down to at most max_frames indices."""
    if n <= max_frames:
        return np.arange(n)
    return np.floor(np.arange(max_frames) * (n / max_frames)).astype(np.int64)


def assemble_retrieved(
    seq: TokenSequence,
    result: RetrievalResult,
    bank: MemoryBank,
    order: str = "chronological",
    fps: float = 1.0,
    max_frames: int = 64,
) -> TokenSequence:
    """Rebuild a sequence from the retrieved fragments, sampled at ``fps``.

    Chronological order keeps the source timestamps. Rank order re-times the
    frames to a uniform 1/fps grid, since the source times are no longer
    monotone.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    if order not in ("chronological", "rank"):
        raise ValueError(f"order must be 'chronological' or 'rank', got {order!r}")
    frags = [bank.get(fid) for fid in result.ids]
    if order == "chronological":
        frags.sort(key=lambda f: f.start_frame)

    picked: list[int] = []
    for frag in frags:
        if frag.end_frame >= seq.num_frames:
            raise ValueError(f"fragment {frag.fragment_id} does not belong to this sequence")
        span = np.arange(frag.start_frame, frag.end_frame + 1)
        picked.extend(span[_resample_span(seq.timestamps[span], fps)].tolist())
    src = np.asarray(picked, dtype=np.int64)[cap_indices(len(picked), max_frames)]

    if order == "chronological":
        times = seq.timestamps[src]
    else:
        times = seq.timestamps[src[0]] + np.arange(len(src)) / fps
    return TokenSequence(seq.frames[src], times, seq.grid_hw, source_frames=src)


def sample_fps(seq: TokenSequence, fps: float = 1.0, max_frames: int = 64) -> TokenSequence:
    """Uniform fps resampling of a whole sequence, then the frame cap."""
    keep = np.asarray(_resample_span(seq.timestamps, fps), dtype=np.int64)
    keep = keep[cap_indices(len(keep), max_frames)]
    return TokenSequence(seq.frames[keep], seq.timestamps[keep], seq.grid_hw, source_frames=keep)


# --- persistence -------------------------------------------------------------


def bank_to_bytes(bank: MemoryBank) -> bytes:
    parts = [_BANK_HEADER.pack(BANK_MAGIC, BANK_VERSION, bank.dim, len(bank))]
    for f in bank.fragments:
        parts.append(
            _BANK_RECORD_META.pack(
                f.fragment_id, f.video_id, f.start_frame, f.end_frame, f.start_time, f.end_time
            )
        )
        parts.append(np.asarray(f.embedding, dtype="<f8").tobytes())
    return b"".join(parts)


def bank_from_bytes(data: bytes, expected_dim: int | None = None) -> MemoryBank:
    if len(data) < 8:
        raise TruncatedFile("file shorter than the magic bytes")
    if data[:8] != BANK_MAGIC:
        raise BadMagic(f"expected {BANK_MAGIC!r}, found {data[:8]!r}")
    if len(data) < _BANK_HEADER.size:
        raise TruncatedFile("incomplete header")
    _, version, dim, count = _BANK_HEADER.unpack_from(data, 0)
    if version != BANK_VERSION:
        raise VersionMismatch(f"bank version {version}, expected {BANK_VERSION}")
    if expected_dim is not None and dim != expected_dim:
        raise DimMismatch(f"bank dim {dim}, expected {expected_dim}")
    rec = _BANK_RECORD_META.size + 8 * dim
    need = _BANK_HEADER.size + count * rec
    if len(data) < need:
        raise TruncatedFile(f"expected {need} bytes for {count} records, got {len(data)}")
    if len(data) > need:
        raise TruncatedFile(f"{len(data) - need} trailing bytes after {count} records")
    frags = []
    off = _BANK_HEADER.size
    for _ in range(count):
        fid, vid, s, e, t0, t1 = _BANK_RECORD_META.unpack_from(data, off)
        off += _BANK_RECORD_META.size
        emb = np.frombuffer(data, dtype="<f8", count=dim, offset=off).astype(np.float64)
        off += 8 * dim
        frags.append(MemoryFragment(fid, vid, s, e, t0, t1, emb))
    return MemoryBank(dim, frags)


def atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def bank_save(bank: MemoryBank, path) -> None:
    atomic_write(path, bank_to_bytes(bank))


def bank_load(path, expected_dim: int | None = None) -> MemoryBank:
    with open(path, "rb") as fh:
        return bank_from_bytes(fh.read(), expected_dim)


def with_embeddings(seq: TokenSequence, frags, embedder: Callable = embed_fragment):
    return [replace(f, embedding=embedder(seq, f)) for f in frags]
