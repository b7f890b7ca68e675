"""Shared data model: token sequences, seeded RNG streams, small vector ops."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

NORM_EPS = 1e-12


class RetcompError(Exception):
    """Base class for all package errors."""


class NumericError(RetcompError):
    pass


class ZeroNorm(NumericError):
    pass


class ZeroProb(NumericError):
    pass


class EmptySequence(RetcompError):
    pass


class DimMismatch(RetcompError):
    pass


class EmptyBank(RetcompError):
    pass


class FormatError(RetcompError):
    """Raised when a binary container fails validation."""


class BadMagic(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


@dataclass
class TokenSequence:
    """Ordered frames of patch tokens.

    ``frames`` has shape (N, P, d): N frames, P patches per frame, d features
    per patch. ``timestamps`` are seconds, strictly increasing. ``grid_hw`` is
    the spatial patch layout with ``H * W == P``. ``source_frames`` optionally
    maps each frame back to an index in the sequence it was cut from.
    """

    frames: np.ndarray
    timestamps: np.ndarray
    grid_hw: tuple[int, int] | None = None
    source_frames: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (N, P, d), got shape {self.frames.shape}")
        n, p, d = self.frames.shape
        if n < 1:
            raise EmptySequence("a token sequence needs at least one frame")
        if p < 1 or d < 1:
            raise ValueError("P and d must be >= 1")
        if self.timestamps.shape != (n,):
            raise ValueError("one timestamp per frame required")
        if n > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames contain non-finite values")
        if self.grid_hw is None:
            self.grid_hw = (1, p)
        self.grid_hw = (int(self.grid_hw[0]), int(self.grid_hw[1]))
        if self.grid_hw[0] * self.grid_hw[1] != p:
            raise ValueError(f"grid {self.grid_hw} does not match P={p}")
        if self.source_frames is not None:
            self.source_frames = np.asarray(self.source_frames, dtype=np.int64)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def patches(self) -> int:
        return self.frames.shape[1]

    @property
    def dim(self) -> int:
        return self.frames.shape[2]

    @property
    def num_tokens(self) -> int:
        return self.num_frames * self.patches

    @property
    def grid_meta(self) -> tuple[int, int, int]:
        """(T, H, W) descriptor; T always tracks the current frame count."""
        return (self.num_frames, *self.grid_hw)

    def __eq__(self, other):
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return (
            self.grid_hw == other.grid_hw
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self.timestamps, other.timestamps)
        )


def cosine(u, v) -> float:
    """Cosine similarity clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1 or u.size < 1:
        raise DimMismatch(f"cosine needs equal-length vectors, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < NORM_EPS or nv < NORM_EPS:
        raise ZeroNorm("cosine of a zero-norm vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def mean_pool(grid) -> np.ndarray:
    """Average a (P, d) patch grid over its patches."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("expected a (P, d) grid")
    return grid.mean(axis=0)


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < NORM_EPS:
        raise ZeroNorm("cannot normalize a zero-norm vector")
    return v / n


# Streams are numpy Generators over the Philox-4x64 counter-based bit generator.
# A named stream derives its SeedSequence spawn key from the CRC-32 of the name,
# so "data", "rollout" and "init" never share state for one master seed.


def make_rng(seed: int, stream: str | None = None) -> np.random.Generator:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    key = () if stream is None else (zlib.crc32(stream.encode("utf-8")),)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))
