"""Labeled joint-position sequences: file I/O, spine centering, resampling
and a synthetic generator with one known discriminative joint.

A sample's positions are stored as a ``T x C x J`` tensor (frames, the three
coordinates, joints).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensor import Tensor

logger = logging.getLogger(__name__)

LABELS = ("normal", "abnormal")
NUMBER_FORMAT = "{:.9g}"


class DatasetError(ValueError):
    """Raised for malformed, missing or inconsistent sample data."""


@dataclass(frozen=True)
class MotionSample:
    positions: Tensor
    joint_names: tuple[str, ...]
    spine_index: int
    label: int
    id: str

    def __post_init__(self):
        if self.positions.ndim != 3 or self.positions.shape[1] != 3:
            raise DatasetError(f"{self.id}: positions must be T x 3 x J, got {self.positions.shape}")
        if self.positions.shape[2] != len(self.joint_names):
            raise DatasetError(
                f"{self.id}: {len(self.joint_names)} joint names for {self.positions.shape[2]} joints"
            )
        if len(set(self.joint_names)) != len(self.joint_names):
            raise DatasetError(f"{self.id}: duplicate joint names")
        if not 0 <= self.spine_index < len(self.joint_names):
            raise DatasetError(f"{self.id}: spine index {self.spine_index} out of range")
        if self.label not in (0, 1):
            raise DatasetError(f"{self.id}: label must be 0 or 1, got {self.label}")

    @property
    def frames(self) -> int:
        return self.positions.shape[0]

    @property
    def coords(self) -> int:
        return self.positions.shape[1]

    @property
    def joints(self) -> int:
        return self.positions.shape[2]


@dataclass(frozen=True)
class Dataset:
    samples: tuple[MotionSample, ...]
    n_classes: int = 2

    def __post_init__(self):
        if not self.samples:
            raise DatasetError("no samples")
        names = self.samples[0].joint_names
        for s in self.samples[1:]:
            if s.joint_names != names:
                raise DatasetError(
                    f"joint schema mismatch between {self.samples[0].id!r} and {s.id!r}"
                )

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def class_counts(self) -> tuple[int, ...]:
        counts = [0] * self.n_classes
        for s in self.samples:
            counts[s.label] += 1
        return tuple(counts)

    @property
    def joint_names(self) -> tuple[str, ...]:
        return self.samples[0].joint_names

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def subset(self, indices) -> "Dataset":
        return Dataset(tuple(self.samples[i] for i in indices), self.n_classes)

    def map(self, fn) -> "Dataset":
        return Dataset(tuple(fn(s) for s in self.samples), self.n_classes)


# ---------------------------------------------------------------------------
# transforms


def normalize_spine(sample: MotionSample) -> MotionSample:
    """Express every joint relative to the spine joint of the same frame."""
    pos = sample.positions.data
    centered = pos - pos[:, :, sample.spine_index : sample.spine_index + 1]
    centered[:, :, sample.spine_index] = 0.0
    return replace(sample, positions=Tensor(centered))


def resample_frames(sample: MotionSample, target_frames: int) -> MotionSample:
    """Linearly interpolate onto ``target_frames`` evenly spaced time points."""
    if target_frames < 2:
        raise ValueError(f"target_frames must be >= 2, got {target_frames}")
    if sample.frames < 2:
        raise ValueError(f"{sample.id}: need at least 2 frames to resample, got {sample.frames}")
    if target_frames == sample.frames:
        return sample
    pos = sample.positions.data
    src = np.arange(sample.frames, dtype=np.float64)
    dst = np.linspace(0.0, sample.frames - 1, target_frames)
    flat = pos.reshape(sample.frames, -1)
    out = np.empty((target_frames, flat.shape[1]))
    for k in range(flat.shape[1]):
        out[:, k] = np.interp(dst, src, flat[:, k])
    out[0], out[-1] = flat[0], flat[-1]
    return replace(sample, positions=Tensor(out.reshape((target_frames,) + pos.shape[1:])))


def prepare(dataset: Dataset, target_frames: int | None = 200) -> Dataset:
    """Spine-center every sample and bring all to a common frame count."""
    ds = dataset.map(normalize_spine)
    if target_frames is not None:
        ds = ds.map(lambda s: resample_frames(s, target_frames))
    return ds


def stack_positions(samples) -> np.ndarray:
    """Batch array ``B x T x C x J``; samples must share their shape."""
    shapes = {s.positions.shape for s in samples}
    if len(shapes) != 1:
        raise DatasetError(f"samples have differing shapes {sorted(shapes)}; resample first")
    return np.stack([s.positions.data for s in samples])


# ---------------------------------------------------------------------------
# file format


def _fmt(x: float) -> str:
    return NUMBER_FORMAT.format(x)


def read_sample(path, label: int, sample_id: str | None = None, spine_index: int | None = None) -> MotionSample:
    path = Path(path)
    sid = sample_id or path.stem
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read sample file ({exc.strerror})") from exc
    names = None
    rows = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#joints"):
            names = tuple(line.split()[1:])
            if not names:
                raise DatasetError(f"{path}:{lineno}: empty joint list")
            continue
        if line.startswith("#spine"):
            parts = line.split()
            if len(parts) != 2:
                raise DatasetError(f"{path}:{lineno}: expected '#spine <index>'")
            try:
                idx = int(parts[1])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: bad spine index {parts[1]!r}") from None
            if spine_index is None:
                spine_index = idx
            continue
        if line.startswith("#"):
            continue
        if names is None:
            raise DatasetError(f"{path}:{lineno}: data before '#joints' header")
        fields = line.split()
        if len(fields) != 3 * len(names):
            raise DatasetError(f"{path}:{lineno}: expected {3 * len(names)} values, got {len(fields)}")
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: non-numeric value") from None
        if not np.all(np.isfinite(values)):
            raise DatasetError(f"{path}:{lineno}: non-finite value")
        rows.append(values)
    if names is None:
        raise DatasetError(f"{path}: missing '#joints' header")
    if not rows:
        raise DatasetError(f"{path}: no frames")
    if spine_index is None:
        if "spine" not in names:
            raise DatasetError(f"{path}: no '#spine' header and no joint named 'spine'")
        spine_index = names.index("spine")
    # rows are joint-major per frame: x0 y0 z0 x1 y1 z1 ...
    arr = np.asarray(rows).reshape(len(rows), len(names), 3).transpose(0, 2, 1)
    try:
        return MotionSample(Tensor(arr), names, spine_index, label, sid)
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from None


def write_sample(sample: MotionSample, path) -> None:
    path = Path(path)
    out = ["#joints " + " ".join(sample.joint_names), f"#spine {sample.spine_index}"]
    frames = sample.positions.data.transpose(0, 2, 1).reshape(sample.frames, -1)
    for row in frames:
        out.append(" ".join(_fmt(v) for v in row))
    path.write_text("\n".join(out) + "\n")


def load_dataset(data_dir, manifest) -> Dataset:
    """Read the samples listed in ``manifest`` relative to ``data_dir``.

    Manifest lines are ``<relative_path> <normal|abnormal> [spine_index]``;
    blank lines and ``#`` comments are skipped.
    """
    data_dir = Path(data_dir)
    manifest = Path(manifest)
    try:
        lines = manifest.read_text().splitlines()
    except OSError as exc:
        raise DatasetError(f"{manifest}: cannot read manifest ({exc.strerror})") from exc
    samples = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise DatasetError(f"{manifest}:{lineno}: expected '<path> <label> [spine_index]'")
        rel, label = parts[0], parts[1]
        if label not in LABELS:
            raise DatasetError(f"{manifest}:{lineno}: unknown label {label!r} (expected normal/abnormal)")
        spine = None
        if len(parts) == 3:
            try:
                spine = int(parts[2])
            except ValueError:
                raise DatasetError(f"{manifest}:{lineno}: bad spine index {parts[2]!r}") from None
        path = data_dir / rel
        if not path.is_file():
            raise DatasetError(f"{manifest}:{lineno}: missing sample file {path}")
        samples.append(read_sample(path, LABELS.index(label), sample_id=Path(rel).stem, spine_index=spine))
    if not samples:
        raise DatasetError(f"{manifest}: no samples")
    ds = Dataset(tuple(samples))
    logger.info("loaded %d samples (%s) from %s", ds.n, ds.class_counts, manifest)
    return ds


def save_dataset(dataset: Dataset, out_dir, manifest_name: str = "manifest.txt") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for s in dataset.samples:
        fname = f"{s.id}.txt"
        write_sample(s, out_dir / fname)
        lines.append(f"{fname} {LABELS[s.label]}")
    manifest = out_dir / manifest_name
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# synthetic data

INFANT_JOINTS = (
    "spine",
    "left_thigh",
    "right_thigh",
    "thoracic_spine",
    "left_calf",
    "right_calf",
    "chest",
    "left_foot",
    "right_foot",
    "neck",
    "left_shoulder",
    "right_shoulder",
    "head",
    "left_upper_arm",
    "right_upper_arm",
    "left_forearm",
    "right_forearm",
    "left_hand",
    "right_hand",
    "left_fingers",
    "right_fingers",
    "left_toes",
    "right_toes",
    "nose",
)


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic generator.

    All joints jitter with smooth band-limited noise around a fixed rest
    pose. The discriminative joint additionally oscillates along one fixed
    axis at ``signal_cycles`` cycles per sequence with ``signal_amplitude``. For
    abnormal samples either the amplitude (``mode="amplitude"``) or the
    frequency (``mode="frequency"``) is multiplied by ``1 + separation``;
    ``separation=0`` makes the classes identically distributed.
    """

    n_joints: int = 16
    n_frames: int = 200
    n_normal: int = 8
    n_abnormal: int = 4
    discriminative_joint: int = 7
    separation: float = 7.0
    mode: str = "amplitude"
    signal_amplitude: float = 0.02
    signal_cycles: float = 8.0
    noise_amplitude: float = 0.008
    noise_components: int = 3
    noise_max_cycles: int = 3
    pose_scale: float = 0.25
    drift: float = 0.1
    joint_names: tuple[str, ...] = field(default=())

    def names(self) -> tuple[str, ...]:
        if self.joint_names:
            return self.joint_names
        if self.n_joints <= len(INFANT_JOINTS):
            return INFANT_JOINTS[: self.n_joints]
        return ("spine",) + tuple(f"joint_{i}" for i in range(1, self.n_joints))


PRESETS = {
    "separable": SyntheticConfig(),
    "null": SyntheticConfig(separation=0.0),
}


def _smooth_noise(rng: np.random.Generator, n_frames: int, shape, cfg: SyntheticConfig) -> np.ndarray:
    t = np.arange(n_frames) / n_frames
    out = np.zeros((n_frames,) + tuple(shape))
    for _ in range(cfg.noise_components):
        # whole cycles per sequence keep every sample's mean pose at the rest pose
        freq = rng.integers(1, int(cfg.noise_max_cycles) + 1, size=shape)
        phase = rng.uniform(0, 2 * np.pi, size=shape)
        amp = rng.uniform(0.5, 1.0, size=shape) * cfg.noise_amplitude
        out += amp * np.sin(2 * np.pi * freq * t[:, None, None] + phase)
    return out


def generate_synthetic(config: SyntheticConfig = SyntheticConfig(), seed: int = 0) -> Dataset:
    cfg = config
    if cfg.n_normal < 1 or cfg.n_abnormal < 1:
        raise ValueError("each class needs at least one sample")
    if cfg.n_joints < 2 or cfg.n_frames < 2:
        raise ValueError("need at least 2 joints and 2 frames")
    d = cfg.discriminative_joint
    if cfg.mode not in ("amplitude", "frequency"):
        raise ValueError(f"mode must be 'amplitude' or 'frequency', got {cfg.mode!r}")
    if not 0 < d < cfg.n_joints:
        raise ValueError(f"discriminative joint {d} must be a non-spine joint index")
    names = cfg.names()
    if len(names) != cfg.n_joints:
        raise ValueError("joint_names length does not match n_joints")
    spine = names.index("spine") if "spine" in names else 0
    rng = np.random.default_rng(seed)
    rest = rng.normal(scale=cfg.pose_scale, size=(3, cfg.n_joints))
    rest[:, spine] = 0.0
    # one movement axis per dataset: the classes differ in how strongly
    # joint d moves along it, not in where it points
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    labels = [0] * cfg.n_normal + [1] * cfg.n_abnormal
    t = np.arange(cfg.n_frames) / cfg.n_frames
    samples = []
    for i, label in enumerate(labels):
        pos = rest[None] + _smooth_noise(rng, cfg.n_frames, (3, cfg.n_joints), cfg)
        boost = 1.0 + cfg.separation * label
        amp = cfg.signal_amplitude * (boost if cfg.mode == "amplitude" else 1.0)
        cycles = cfg.signal_cycles * (boost if cfg.mode == "frequency" else 1.0)
        phase = rng.uniform(0, 2 * np.pi)
        pos[:, :, d] += amp * np.sin(2 * np.pi * cycles * t + phase)[:, None] * direction
        # global translation, removed again by spine centering
        pos += rng.uniform(-1, 1, size=3)[None, :, None] + cfg.drift * t[:, None, None] * rng.normal(size=3)[None, :, None]
        sid = f"{'normal' if label == 0 else 'abnormal'}_{i:02d}"
        samples.append(MotionSample(Tensor(pos), names, spine, label, sid))
    return Dataset(tuple(samples))

