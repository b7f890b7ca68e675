"""Synthetic event videos with a retrieval question per video.

Each video is a run of events; every frame of an event is its class prototype
plus independent Gaussian noise per patch. The query is a noisy prototype of
one event's class and the answer is that class.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import BadMagic, TokenSequence, TruncatedFile, VersionMismatch
from .vmr import atomic_write

DATA_MAGIC = b"MARCDATA"
DATA_VERSION = 1


@dataclass
class SynthConfig:
    num_classes: int = 4
    dim: int = 16
    patches: int = 4
    events_per_video: int = 6
    event_len_lo: int = 6
    event_len_hi: int = 10
    noise_sigma: float = 0.05
    fps: float = 1.0
    num_samples: int = 100

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.event_len_lo < 1 or self.event_len_hi < self.event_len_lo:
            raise ValueError("need 1 <= event_len_lo <= event_len_hi")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.events_per_video < 1 or self.dim < 1 or self.patches < 1:
            raise ValueError("events_per_video, dim and patches must be >= 1")
        if self.fps <= 0:
            raise ValueError("fps must be positive")


@dataclass
class QASample:
    video: TokenSequence
    query: np.ndarray
    answer: int
    planted_boundaries: list[int]  # first frame index of every event after the first
    per_event_classes: list[int]
    target_event: int = 0

    def __eq__(self, other):
        if not isinstance(other, QASample):
            return NotImplemented
        return (
            self.video == other.video
            and np.array_equal(self.query, other.query)
            and self.answer == other.answer
            and self.planted_boundaries == other.planted_boundaries
            and self.per_event_classes == other.per_event_classes
            and self.target_event == other.target_event
        )


def gen_prototypes(num_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal class prototypes when num_classes <= dim, random unit vectors otherwise."""
    g = rng.standard_normal((dim, num_classes))
    if num_classes <= dim:
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.diag(r))  # fix column signs so the draw is unique
        return q.T.copy()
    return (g / np.linalg.norm(g, axis=0)).T.copy()


def coherence(prototypes: np.ndarray) -> float:
    """Largest absolute pairwise cosine between prototypes."""
    gram = np.abs(prototypes @ prototypes.T)
    np.fill_diagonal(gram, 0.0)
    return float(gram.max()) if len(prototypes) > 1 else 0.0


def gen_video(cfg: SynthConfig, prototypes: np.ndarray, rng: np.random.Generator) -> QASample:
    C, P, d = cfg.num_classes, cfg.patches, cfg.dim
    classes = [int(rng.integers(C))]
    for _ in range(cfg.events_per_video - 1):
        c = int(rng.integers(C - 1))
        classes.append(c if c < classes[-1] else c + 1)
    lengths = rng.integers(cfg.event_len_lo, cfg.event_len_hi + 1, size=cfg.events_per_video)
    n = int(lengths.sum())
    base = np.repeat(prototypes[classes], lengths, axis=0)  # (N, d)
    frames = base[:, None, :] + cfg.noise_sigma * rng.standard_normal((n, P, d))
    boundaries = np.cumsum(lengths)[:-1].tolist()
    target = int(rng.integers(cfg.events_per_video))
    answer = classes[target]
    query = prototypes[answer] + cfg.noise_sigma * rng.standard_normal(d)
    video = TokenSequence(frames, np.arange(n) / cfg.fps)
    return QASample(video, query, answer, [int(b) for b in boundaries], classes, target)


def gen_dataset(cfg: SynthConfig, rng: np.random.Generator):
    """Returns (prototypes, samples)."""
    protos = gen_prototypes(cfg.num_classes, cfg.dim, rng)
    return protos, [gen_video(cfg, protos, rng) for _ in range(cfg.num_samples)]


def predict(policy, seq, argmax: bool = True, rng: np.random.Generator | None = None) -> int:
    from .cgrpo import policy_forward

    p = policy_forward(policy, seq)
    if argmax:
        return int(np.argmax(p))
    if rng is None:
        raise ValueError("sampling decode needs an rng")
    return int(rng.choice(len(p), p=p))


def eval_accuracy(policy, inputs, answers, argmax: bool = True, rng: np.random.Generator | None = None) -> float:
    """Fraction of inputs whose decoded class equals the answer.

    ``inputs`` are TokenSequences (full or compressed) or precomputed feature
    vectors, aligned with ``answers``.
    """
    if len(inputs) == 0:
        raise ValueError("no samples to evaluate")
    hits = sum(predict(policy, x, argmax, rng) == y for x, y in zip(inputs, answers))
    return hits / len(inputs)


# --- dataset container -------------------------------------------------------
#
# header: "MARCDATA" | u32 version | u32 sample count
# per sample: u32 N, P, d, H, W | N f64 timestamps | N*P*d f64 frames
#             | d f64 query | u32 answer | u32 target_event
#             | u32 n_boundaries, n x u32 | u32 n_events, n x u32 classes
# all little-endian


def dataset_to_bytes(samples) -> bytes:
    out = [struct.pack("<8sII", DATA_MAGIC, DATA_VERSION, len(samples))]
    for s in samples:
        v = s.video
        n, p, d = v.frames.shape
        out.append(struct.pack("<5I", n, p, d, *v.grid_hw))
        out.append(v.timestamps.astype("<f8").tobytes())
        out.append(v.frames.astype("<f8").tobytes())
        out.append(np.asarray(s.query).astype("<f8").tobytes())
        out.append(struct.pack("<II", s.answer, s.target_event))
        out.append(struct.pack(f"<I{len(s.planted_boundaries)}I", len(s.planted_boundaries), *s.planted_boundaries))
        out.append(struct.pack(f"<I{len(s.per_event_classes)}I", len(s.per_event_classes), *s.per_event_classes))
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, size: int) -> int:
        if self.off + size > len(self.data):
            raise TruncatedFile(f"need {size} bytes at offset {self.off}, file has {len(self.data)}")
        off = self.off
        self.off += size
        return off

    def unpack(self, fmt: str):
        st = struct.Struct(fmt)
        return st.unpack_from(self.data, self.take(st.size))

    def floats(self, count: int) -> np.ndarray:
        off = self.take(8 * count)
        return np.frombuffer(self.data, dtype="<f8", count=count, offset=off).astype(np.float64)


def dataset_from_bytes(data: bytes) -> list[QASample]:
    if data[:8] != DATA_MAGIC:
        if len(data) < 8:
            raise TruncatedFile("file shorter than the magic bytes")
        raise BadMagic(f"expected {DATA_MAGIC!r}, found {data[:8]!r}")
    rd = _Reader(data)
    _, version, count = rd.unpack("<8sII")
    if version != DATA_VERSION:
        raise VersionMismatch(f"dataset version {version}, expected {DATA_VERSION}")
    samples = []
    for _ in range(count):
        n, p, d, h, w = rd.unpack("<5I")
        times = rd.floats(n)
        frames = rd.floats(n * p * d).reshape(n, p, d)
        query = rd.floats(d)
        answer, target = rd.unpack("<II")
        (nb,) = rd.unpack("<I")
        bounds = list(rd.unpack(f"<{nb}I"))
        (ne,) = rd.unpack("<I")
        classes = list(rd.unpack(f"<{ne}I"))
        samples.append(QASample(TokenSequence(frames, times, (h, w)), query, answer, bounds, classes, target))
    if rd.off != len(data):
        raise TruncatedFile(f"{len(data) - rd.off} trailing bytes after {count} samples")
    return samples


def manifest(samples, cfg: SynthConfig | None = None, seed: int | None = None) -> dict:
    return {
        "format": DATA_MAGIC.decode(),
        "version": DATA_VERSION,
        "num_samples": len(samples),
        "seed": seed,
        "synth": asdict(cfg) if cfg is not None else None,
        "samples": [
            {
                "index": i,
                "frames": s.video.num_frames,
                "answer": s.answer,
                "target_event": s.target_event,
                "per_event_classes": s.per_event_classes,
                "planted_boundaries": s.planted_boundaries,
            }
            for i, s in enumerate(samples)
        ],
    }


def save_dataset(samples, path, cfg: SynthConfig | None = None, seed: int | None = None, manifest_path=None) -> None:
    atomic_write(path, dataset_to_bytes(samples))
    if manifest_path is not None:
        text = json.dumps(manifest(samples, cfg, seed), indent=2, sort_keys=True) + "\n"
        atomic_write(manifest_path, text.encode("utf-8"))


def load_dataset(path) -> list[QASample]:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())
