"""Synthetic sequence tasks, the feature pipeline, and the FSQ1 file format.

Three generators produce labeled utterances: delayed recall (emit the symbol
seen L frames ago), parity over a sliding bit window, and a sticky hidden
Markov chain with Gaussian emissions.  Frames are quantized through float32
at creation so that serializing to FSQ1 (which stores float32) and reading
back reproduces every bit.

The feature pipeline mirrors a frame-based acoustic front end: delta
expansion with the +/-2 regression window, per-utterance mean and
per-segment variance normalization, and target delay that re-pairs label
y_t with frame x_{t+delay}.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

TASK_KINDS = ("delayed_recall", "parity_window", "markov_frames")


@dataclass
class SequenceBatch:
    """One labeled utterance: frames, per-frame class labels, and grouping ids."""

    frames: np.ndarray       # (T, D) float64
    labels: np.ndarray       # (T,) integers in [0, n_classes)
    n_classes: int
    utterance_id: str
    segment_id: str

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.frames.ndim != 2:
            raise ConfigError(f"frames must be (T, D), got shape {self.frames.shape}")
        if self.labels.shape != (self.frames.shape[0],):
            raise ConfigError(
                f"{self.labels.shape[0] if self.labels.ndim == 1 else self.labels.shape} labels "
                f"for {self.frames.shape[0]} frames"
            )
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConfigError("labels out of range for n_classes")

    @property
    def seq_len(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class TaskSpec:
    """Which synthetic task to draw, how long, how many, and from which seed.

    Per-kind fields: delayed_recall uses ``lag`` and ``n_classes``;
    parity_window uses ``window``; markov_frames uses ``states`` and
    ``emission_dim``.  ``noise`` is the additive noise scale of the
    delayed-recall frames.  ``segment_size`` groups consecutive utterances
    into variance-normalization segments.
    """

    kind: str
    seq_len: int
    count: int
    seed: int
    lag: int = 0
    n_classes: int = 4
    window: int = 0
    states: int = 0
    emission_dim: int = 0
    noise: float = 0.1
    segment_size: int = 10

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}; valid: {', '.join(TASK_KINDS)}")
        if self.seq_len < 1 or self.count < 1:
            raise ConfigError(f"seq_len and count must be positive, got {self.seq_len}, {self.count}")
        if self.segment_size < 1:
            raise ConfigError(f"segment_size must be >= 1, got {self.segment_size}")
        if self.kind == "delayed_recall":
            if not 0 <= self.lag < self.seq_len:
                raise ConfigError(f"need 0 <= lag < seq_len, got lag={self.lag}, T={self.seq_len}")
            if self.n_classes < 2:
                raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        elif self.kind == "parity_window":
            if not 1 <= self.window < self.seq_len:
                raise ConfigError(f"need 1 <= window < seq_len, got W={self.window}, T={self.seq_len}")
        elif self.kind == "markov_frames":
            if self.states < 2:
                raise ConfigError(f"markov_frames needs >= 2 states, got {self.states}")
            if self.emission_dim < 1:
                raise ConfigError(f"emission_dim must be >= 1, got {self.emission_dim}")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown task options: {sorted(extra)}")
        return cls(**d)


def _quantize(frames: np.ndarray) -> np.ndarray:
    # round through float32 so FSQ1 serialization is bit-exact
    return frames.astype(np.float32).astype(np.float64)


def generate(task: TaskSpec) -> list[SequenceBatch]:
    """Draw ``task.count`` utterances deterministically from the task seed."""
    rng = np.random.Generator(np.random.PCG64(task.seed))
    T = task.seq_len
    out: list[SequenceBatch] = []
    if task.kind == "markov_frames":
        # fixed per-dataset chain: sticky transitions, well-separated means
        trans = np.full((task.states, task.states), 0.2 / (task.states - 1))
        np.fill_diagonal(trans, 0.8)
        means = 2.0 * rng.standard_normal((task.states, task.emission_dim))
    for u in range(task.count):
        utt = f"u{u:05d}"
        seg = f"s{u // task.segment_size:04d}"
        if task.kind == "delayed_recall":
            symbols = rng.integers(0, task.n_classes, size=T)
            frames = np.zeros((T, task.n_classes))
            frames[np.arange(T), symbols] = 1.0
            frames += task.noise * rng.standard_normal((T, task.n_classes))
            labels = np.zeros(T, dtype=np.int64)
            labels[task.lag:] = symbols[: T - task.lag] if task.lag else symbols
            out.append(SequenceBatch(_quantize(frames), labels, task.n_classes, utt, seg))
        elif task.kind == "parity_window":
            bits = rng.integers(0, 2, size=T)
            csum = np.concatenate([[0], np.cumsum(bits)])
            labels = np.empty(T, dtype=np.int64)
            for t in range(T):
                lo = max(t - task.window + 1, 0)
                labels[t] = (csum[t + 1] - csum[lo]) % 2
            out.append(SequenceBatch(_quantize(bits[:, None].astype(np.float64)), labels, 2, utt, seg))
        else:  # markov_frames
            states = np.empty(T, dtype=np.int64)
            states[0] = rng.integers(0, task.states)
            for t in range(1, T):
                states[t] = rng.choice(task.states, p=trans[states[t - 1]])
            frames = means[states] + 0.5 * rng.standard_normal((T, task.emission_dim))
            out.append(SequenceBatch(_quantize(frames), states, task.states, utt, seg))
    return out


def delta_expand(frames: np.ndarray) -> np.ndarray:
    """Append regression deltas over the +/-2 window; boundary frames replicate.

    delta_t = sum_{th=1..2} th * (x_{t+th} - x_{t-th}) / (2 * sum th^2)
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ConfigError(f"frames must be (T, D) with T >= 1, got shape {frames.shape}")
    T = frames.shape[0]
    padded = np.pad(frames, ((2, 2), (0, 0)), mode="edge")
    delta = (
        1.0 * (padded[3:T + 3] - padded[1:T + 1])
        + 2.0 * (padded[4:T + 4] - padded[0:T])
    ) / 10.0
    return np.hstack([frames, delta])


def normalize(
    batches: list[SequenceBatch], segment_map: dict | None = None
) -> list[SequenceBatch]:
    """Per-utterance mean removal, then per-segment variance scaling to one.

    Variances are pooled over all frames of a segment after mean removal;
    dimensions with (numerically) zero variance are clamped to one instead
    of failing, since synthetic one-hot features can be constant.  Pure:
    returns new batches.
    """
    if not batches:
        return []

    def seg_of(b: SequenceBatch) -> str:
        if segment_map is None:
            return b.segment_id
        if b.utterance_id not in segment_map:
            raise ConfigError(f"utterance {b.utterance_id!r} missing from the segment map")
        return segment_map[b.utterance_id]

    centered = [b.frames - b.frames.mean(axis=0) for b in batches]
    seg_sq: dict = {}
    seg_n: dict = {}
    for b, c in zip(batches, centered):
        key = seg_of(b)
        seg_sq[key] = seg_sq.get(key, 0.0) + (c * c).sum(axis=0)
        seg_n[key] = seg_n.get(key, 0) + c.shape[0]
    seg_scale = {}
    for key, sq in seg_sq.items():
        var = sq / seg_n[key]
        var = np.where(var < 1e-24, 1.0, var)
        seg_scale[key] = 1.0 / np.sqrt(var)
    return [
        SequenceBatch(
            c * seg_scale[seg_of(b)], b.labels.copy(), b.n_classes, b.utterance_id, b.segment_id
        )
        for b, c in zip(batches, centered)
    ]


def apply_delay(batch: SequenceBatch, delay: int) -> SequenceBatch:
    """Re-pair label y_t with frame x_{t+delay}; the tail replicates the last frame."""
    if delay < 0:
        raise ConfigError(f"delay must be >= 0, got {delay}")
    T = batch.seq_len
    if delay >= T:
        raise ConfigError(f"delay {delay} must be smaller than the sequence length {T}")
    if delay == 0:
        frames = batch.frames.copy()
    else:
        frames = np.concatenate(
            [batch.frames[delay:], np.repeat(batch.frames[-1:], delay, axis=0)]
        )
    return SequenceBatch(frames, batch.labels.copy(), batch.n_classes, batch.utterance_id, batch.segment_id)


def prepare_sequences(
    batches: list[SequenceBatch], target_delay: int = 0
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Apply target delay and strip to the (frames, labels) pairs the engine consumes."""
    shifted = [apply_delay(b, target_delay) if target_delay else b for b in batches]
    return [(b.frames, b.labels) for b in shifted]


# ---------------------------------------------------------------------------
# FSQ1 serialization
# ---------------------------------------------------------------------------

_MAGIC = b"FSQ1"


def write_fsq1(batch: SequenceBatch, path) -> None:
    """magic; u32 T, D, C; T*D float32; T int32; two length-prefixed UTF-8 ids."""
    T, D = batch.frames.shape
    utt = batch.utterance_id.encode("utf-8")
    seg = batch.segment_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", T, D, batch.n_classes))
        fh.write(batch.frames.astype("<f4").tobytes())
        fh.write(batch.labels.astype("<i4").tobytes())
        fh.write(struct.pack("<I", len(utt)))
        fh.write(utt)
        fh.write(struct.pack("<I", len(seg)))
        fh.write(seg)


def read_fsq1(path) -> SequenceBatch:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ConfigError(f"{path}: not an FSQ1 file (bad magic)")
    off = 4
    T, D, C = struct.unpack_from("<III", blob, off)
    off += 12
    n_f = T * D * 4
    frames = np.frombuffer(blob[off:off + n_f], dtype="<f4").reshape(T, D).astype(np.float64)
    off += n_f
    labels = np.frombuffer(blob[off:off + T * 4], dtype="<i4").astype(np.int64)
    off += T * 4
    (ulen,) = struct.unpack_from("<I", blob, off)
    off += 4
    utt = blob[off:off + ulen].decode("utf-8")
    off += ulen
    (slen,) = struct.unpack_from("<I", blob, off)
    off += 4
    seg = blob[off:off + slen].decode("utf-8")
    return SequenceBatch(frames, labels, int(C), utt, seg)


def write_dataset(batches: list[SequenceBatch], out_dir, manifest_name: str = "manifest.txt") -> Path:
    """One FSQ1 file per utterance plus a manifest of relative paths; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rel_paths = []
    for b in batches:
        rel = f"{b.utterance_id}.fsq"
        write_fsq1(b, out_dir / rel)
        rel_paths.append(rel)
    manifest = out_dir / manifest_name
    manifest.write_text("".join(p + "\n" for p in rel_paths), encoding="utf-8")
    return manifest


def read_dataset(manifest_path) -> list[SequenceBatch]:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ConfigError(f"manifest {manifest_path} does not exist")
    base = manifest_path.parent
    batches = []
    for line in manifest_path.read_text(encoding="utf-8").splitlines():
        rel = line.strip()
        if not rel:
            continue
        fp = base / rel
        if not fp.exists():
            raise ConfigError(f"manifest entry {rel!r} not found under {base}")
        batches.append(read_fsq1(fp))
    return batches
