"""Deterministic synthetic paired image/audio-word dataset.

Each class gets a procedural glyph image family and a synthetic spoken
"word" built from formant-like phoneme segments. Instances of a class share
the class structure and differ by small seeded jitter, so the pairing is
learnable but not degenerate. Everything is a pure function of the dataset
spec and seed: regenerating produces byte-identical files.

Also hosts the per-image standard normalization used in front of the image
encoder, zero padding, and binary netpbm image I/O.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import read_wav, write_wav

# Salts decouple the word-structure stream from the per-instance jitter
# stream so the same class keeps its word across datasets.
_WORD_SALT = 0x57D0
_JITTER_SALT = 0x1177E5

_MANIFEST_MAGIC = "img2wav-dataset v1"


@dataclass
class ImageSample:
    """One image: pixels in [0, 1], class label, stable id."""

    pixels: np.ndarray  # (H, W, C) float64
    label: int
    id: str


@dataclass
class AudioClip:
    """Mono waveform in [-1, 1] with its pre-padding length."""

    samples: np.ndarray
    sample_rate: int
    original_len: int
    padded_len: int


@dataclass
class ManifestRecord:
    id: str
    split: str
    label: int
    original_len: int
    image_path: str
    audio_path: str


@dataclass
class DatasetManifest:
    name: str
    classes: int
    l_s: int
    sample_rate: int
    image_shape: tuple[int, int, int]  # (H, W, C)
    seed: int
    records: list[ManifestRecord] = field(default_factory=list)

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]


@dataclass
class DatasetSpec:
    """What to generate: class count, per-class split sizes, rates, sizes."""

    name: str
    classes: int
    train_per_class: int
    test_per_class: int
    seed: int
    sample_rate: int = 8000
    image_size: int = 16
    image_channels: int = 1
    duration_ms: tuple[float, float] = (322.0, 823.0)

    def __post_init__(self):
        if self.classes < 1:
            raise ValueError(f"need at least one class, got {self.classes}")
        if self.train_per_class < 0 or self.test_per_class < 0:
            raise ValueError("per-class counts must be non-negative")
        if self.duration_ms[0] >= self.duration_ms[1]:
            raise ValueError(f"bad duration bounds {self.duration_ms}")
        if self.image_channels not in (1, 3):
            raise ValueError(f"image_channels must be 1 or 3, got {self.image_channels}")


# ---------------------------------------------------------------------------
# normalization and padding


def normalize_image(pixels: np.ndarray) -> np.ndarray:
    """Standardize one image to roughly zero mean, unit variance.

    Computes (I - mu) / max(theta, 1/sqrt(P)) with mu and theta the mean and
    population standard deviation over all P pixel values; the clamp keeps
    flat images finite. Returns the image transposed to (C, H, W) for the
    convolutional encoder.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    if pixels.ndim != 3:
        raise ValueError(f"normalize_image expects (H, W, C) pixels, got shape {pixels.shape}")
    p = pixels.size
    mu = pixels.mean()
    theta = pixels.std()
    out = (pixels - mu) / max(theta, 1.0 / np.sqrt(p))
    return out.transpose(2, 0, 1)


def pad_clip(clip: AudioClip, padded_len: int) -> AudioClip:
    """Zero-pad the waveform tail out to ``padded_len`` samples."""
    n = len(clip.samples)
    if n > padded_len:
        raise ValueError(f"clip of {n} samples does not fit padded length {padded_len}")
    samples = np.zeros(padded_len, dtype=np.float64)
    samples[:n] = clip.samples
    return AudioClip(samples, clip.sample_rate, clip.original_len, padded_len)


# ---------------------------------------------------------------------------
# synthetic word audio


def _word_structure(class_id: int, rate_limit: float) -> dict:
    """Per-class word layout: segments, formant frequencies, envelopes."""
    rng = np.random.default_rng(np.random.SeedSequence([_WORD_SALT, class_id]))
    n_segments = int(rng.integers(2, 5))
    segments = []
    for _ in range(n_segments):
        n_formants = int(rng.integers(2, 4))
        freqs = [
            rng.uniform(250.0, 800.0),
            rng.uniform(900.0, 2200.0),
            rng.uniform(2400.0, 3400.0),
        ][:n_formants]
        freqs = [min(f, rate_limit) for f in freqs]
        segments.append(
            {
                "freqs": freqs,
                "amps": [1.0, 0.55, 0.3][:n_formants],
                "phases": [rng.uniform(0.0, 2.0 * np.pi) for _ in range(n_formants)],
                "rel_dur": rng.uniform(0.6, 1.4),
                "tremolo": rng.uniform(0.0, 0.25),
            }
        )
    return {"segments": segments, "dur_frac": rng.uniform(0.0, 1.0)}


def synthesize_word_audio(
    class_id: int,
    sample_rate: int,
    seed: int,
    duration_ms: tuple[float, float] = (322.0, 823.0),
) -> AudioClip:
    """Render one spoken-word-like clip for a class.

    The class fixes the phoneme sequence (formant frequencies, envelope,
    segment layout); the seed adds about +/-3% pitch and duration jitter so
    clips of one class are similar but not identical. Peak-normalized to 0.9.
    """
    lo, hi = duration_ms
    struct = _word_structure(class_id, rate_limit=0.45 * sample_rate)
    jitter = np.random.default_rng(np.random.SeedSequence([_JITTER_SALT, class_id, seed]))
    pitch_j = 1.0 + 0.03 * jitter.uniform(-1.0, 1.0)
    dur_j = 1.0 + 0.03 * jitter.uniform(-1.0, 1.0)

    # Base duration sits inside the bounds with margin, so +/-3% jitter can
    # never escape them.
    base_ms = (lo * 1.032) + struct["dur_frac"] * (hi * 0.968 - lo * 1.032)
    total_ms = base_ms * dur_j

    rel = np.array([s["rel_dur"] for s in struct["segments"]])
    seg_ms = rel / rel.sum() * total_ms
    fade = int(round(0.010 * sample_rate))  # 10 ms crossfade

    rendered = []
    for spec, ms in zip(struct["segments"], seg_ms):
        n = max(int(round(ms / 1000.0 * sample_rate)), 2 * fade + 8)
        t = np.arange(n) / sample_rate
        seg = np.zeros(n)
        for f, a, ph in zip(spec["freqs"], spec["amps"], spec["phases"]):
            seg += a * np.sin(2.0 * np.pi * f * pitch_j * t + ph)
        if spec["tremolo"] > 0:
            seg *= 1.0 - spec["tremolo"] * 0.5 * (1.0 - np.cos(2.0 * np.pi * 6.0 * t))
        env = np.ones(n)
        edge = min(fade, n // 2)
        ramp = 0.5 * (1.0 - np.cos(np.linspace(0.0, np.pi, edge)))
        env[:edge] = ramp
        env[-edge:] = ramp[::-1]
        rendered.append(seg * env)

    word = rendered[0]
    for seg in rendered[1:]:
        k = min(fade, len(word), len(seg))
        fade_in = 0.5 * (1.0 - np.cos(np.linspace(0.0, np.pi, k)))
        merged = np.concatenate([word[:-k], word[-k:] * (1.0 - fade_in) + seg[:k] * fade_in, seg[k:]])
        word = merged

    peak = np.abs(word).max()
    if peak > 0:
        word = word * (0.9 / peak)
    return AudioClip(word, sample_rate, original_len=len(word), padded_len=len(word))


# ---------------------------------------------------------------------------
# procedural images


def _glyph_image(class_id: int, size: int, channels: int, jitter: np.random.Generator) -> np.ndarray:
    """Class-conditioned pattern with per-instance jitter, values in [0, 1]."""
    rng = np.random.default_rng(np.random.SeedSequence([_WORD_SALT + 1, class_id]))
    family = int(rng.integers(0, 4))
    angle = rng.uniform(0.0, np.pi)
    freq = rng.uniform(1.5, 4.0)
    cx, cy = rng.uniform(0.3, 0.7, size=2)
    rgb = rng.uniform(0.4, 1.0, size=3)

    phase = jitter.uniform(-0.5, 0.5)
    dx, dy = jitter.uniform(-0.08, 0.08, size=2)

    ys, xs = np.mgrid[0:size, 0:size] / (size - 1)
    u = (xs - cx - dx) * np.cos(angle) + (ys - cy - dy) * np.sin(angle)
    v = -(xs - cx - dx) * np.sin(angle) + (ys - cy - dy) * np.cos(angle)
    if family == 0:  # stripes
        base = np.sin(2.0 * np.pi * freq * u + phase)
    elif family == 1:  # concentric rings
        base = np.cos(2.0 * np.pi * freq * np.hypot(u, v) * 2.0 + phase)
    elif family == 2:  # checker
        base = np.sin(2.0 * np.pi * freq * u + phase) * np.sin(2.0 * np.pi * freq * v + phase)
    else:  # radial sectors
        base = np.cos(np.floor(freq) * 2.0 * np.arctan2(v, u) + phase)
    base = 0.5 + 0.5 * base
    base += jitter.normal(0.0, 0.02, size=base.shape)
    base = np.clip(base, 0.0, 1.0)
    if channels == 1:
        return base[:, :, None]
    return np.clip(base[:, :, None] * rgb[None, None, :], 0.0, 1.0)


# ---------------------------------------------------------------------------
# netpbm I/O


def write_netpbm(path, pixels: np.ndarray) -> None:
    """Write (H, W, 1) as binary PGM or (H, W, 3) as binary PPM, 8 bit."""
    pixels = np.asarray(pixels)
    h, w, c = pixels.shape
    if c not in (1, 3):
        raise ValueError(f"netpbm supports 1 or 3 channels, got {c}")
    magic = b"P5" if c == 1 else b"P6"
    data = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    body = data[:, :, 0].tobytes() if c == 1 else data.tobytes()
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + body)


def read_netpbm(path) -> np.ndarray:
    """Read binary PGM/PPM into (H, W, C) floats in [0, 1]."""
    raw = Path(path).read_bytes()
    if raw[:2] == b"P5":
        channels = 1
    elif raw[:2] == b"P6":
        channels = 3
    else:
        raise ValueError(f"{path}: not a binary PGM/PPM file")
    # header tokens: width, height, maxval; '#' starts a comment
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    n = w * h * channels
    body = raw[pos : pos + n]
    if len(body) != n:
        raise ValueError(f"{path}: expected {n} pixel bytes, found {len(body)}")
    img = np.frombuffer(body, dtype=np.uint8).astype(np.float64) / maxval
    return img.reshape(h, w, channels)


# ---------------------------------------------------------------------------
# dataset build / load


def build_dataset(spec: DatasetSpec, out_dir) -> DatasetManifest:
    """Generate all files for a paired dataset and write its manifest.

    The padded length is the maximum clip length observed over the whole
    dataset (both splits share one model-facing length).
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "audio").mkdir(parents=True, exist_ok=True)

    entries = []  # (record skeleton, pixels, clip)
    index = 0
    for split, per_class in (("train", spec.train_per_class), ("test", spec.test_per_class)):
        for class_id in range(spec.classes):
            for k in range(per_class):
                instance_seed = spec.seed * 1_000_003 + index
                jitter = np.random.default_rng(
                    np.random.SeedSequence([_JITTER_SALT + 2, spec.seed, index])
                )
                pixels = _glyph_image(class_id, spec.image_size, spec.image_channels, jitter)
                clip = synthesize_word_audio(class_id, spec.sample_rate, instance_seed, spec.duration_ms)
                ex_id = f"{split}_{class_id:03d}_{k:04d}"
                entries.append((ex_id, split, class_id, pixels, clip))
                index += 1

    if not entries:
        raise ValueError("dataset spec produces no examples")
    l_s = max(len(clip.samples) for _, _, _, _, clip in entries)

    ext = "pgm" if spec.image_channels == 1 else "ppm"
    records = []
    for ex_id, split, class_id, pixels, clip in entries:
        image_rel = f"images/{ex_id}.{ext}"
        audio_rel = f"audio/{ex_id}.wav"
        write_netpbm(out / image_rel, pixels)
        padded = pad_clip(clip, l_s)
        write_wav(out / audio_rel, padded.samples, spec.sample_rate)
        records.append(ManifestRecord(ex_id, split, class_id, clip.original_len, image_rel, audio_rel))

    manifest = DatasetManifest(
        name=spec.name,
        classes=spec.classes,
        l_s=l_s,
        sample_rate=spec.sample_rate,
        image_shape=(spec.image_size, spec.image_size, spec.image_channels),
        seed=spec.seed,
        records=records,
    )
    save_manifest(manifest, out / "manifest.txt")
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    h, w, c = manifest.image_shape
    lines = [
        _MANIFEST_MAGIC,
        f"name={manifest.name}",
        f"classes={manifest.classes}",
        f"l_s={manifest.l_s}",
        f"sample_rate={manifest.sample_rate}",
        f"image_height={h}",
        f"image_width={w}",
        f"image_channels={c}",
        f"seed={manifest.seed}",
        f"train_count={len(manifest.split('train'))}",
        f"test_count={len(manifest.split('test'))}",
    ]
    for r in manifest.records:
        lines.append(f"record {r.id} {r.split} {r.label} {r.original_len} {r.image_path} {r.audio_path}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != _MANIFEST_MAGIC:
        raise ValueError(f"{path}: not a dataset manifest (bad magic line)")
    fields: dict[str, str] = {}
    records = []
    for line in lines[1:]:
        if not line.strip():
            continue
        if line.startswith("record "):
            parts = line.split()
            if len(parts) != 7:
                raise ValueError(f"{path}: malformed record line {line!r}")
            records.append(
                ManifestRecord(parts[1], parts[2], int(parts[3]), int(parts[4]), parts[5], parts[6])
            )
        else:
            key, _, value = line.partition("=")
            fields[key] = value
    manifest = DatasetManifest(
        name=fields["name"],
        classes=int(fields["classes"]),
        l_s=int(fields["l_s"]),
        sample_rate=int(fields["sample_rate"]),
        image_shape=(int(fields["image_height"]), int(fields["image_width"]), int(fields["image_channels"])),
        seed=int(fields["seed"]),
        records=records,
    )
    for split, key in (("train", "train_count"), ("test", "test_count")):
        if len(manifest.split(split)) != int(fields[key]):
            raise ValueError(f"{path}: {key} does not match record lines")
    return manifest


def load_example(root, record: ManifestRecord, l_s: int, sample_rate: int) -> tuple[ImageSample, AudioClip]:
    root = Path(root)
    pixels = read_netpbm(root / record.image_path)
    samples, rate = read_wav(root / record.audio_path)
    if rate != sample_rate:
        raise ValueError(f"{record.audio_path}: rate {rate} does not match manifest {sample_rate}")
    if len(samples) != l_s:
        raise ValueError(f"{record.audio_path}: length {len(samples)} does not match padded length {l_s}")
    image = ImageSample(pixels, record.label, record.id)
    clip = AudioClip(samples, rate, record.original_len, l_s)
    return image, clip


def manifest_checksum(root) -> str:
    """SHA-256 over the manifest and every referenced file, for regeneration
    stability checks."""
    root = Path(root)
    manifest = load_manifest(root / "manifest.txt")
    h = hashlib.sha256()
    h.update((root / "manifest.txt").read_bytes())
    for r in manifest.records:
        h.update(r.id.encode())
        h.update((root / r.image_path).read_bytes())
        h.update((root / r.audio_path).read_bytes())
    return h.hexdigest()
