"""Evaluation of generated audio: spectrograms, 2D correlation, and STOI.

The spectrogram convention (Hann window, 512-sample frames, hop 128) is fixed
here and used for all correlation comparisons so scores are internally
consistent. STOI follows the published short-time objective intelligibility
procedure: 10 kHz analysis rate, silent-frame removal over a 40 dB range,
15 one-third-octave bands from 150 Hz, 384 ms envelope segments with
normalization and -15 dB clipping, and a final average of per-band,
per-segment correlations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, load_example

_STOI_FS = 10_000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_NUM_BANDS = 15
_STOI_MIN_FREQ = 150.0
_STOI_SEG_FRAMES = 30  # 384 ms at 10 kHz with hop 128
_STOI_MIN_SEG_FRAMES = 10  # shortest clip we will still score
_STOI_BETA_DB = -15.0
_STOI_DYN_RANGE_DB = 40.0

_REPORT_MAGIC = "img2wav-report v1"


@dataclass
class Spectrogram:
    """Time-frequency magnitudes: frames along axis 0, bins along axis 1."""

    mag: np.ndarray
    frame_len: int
    hop: int
    sample_rate: int


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(samples: np.ndarray, sample_rate: int, frame_len: int = 512, hop: int = 128) -> Spectrogram:
    """One-sided magnitude spectrogram of a mono signal."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError(f"stft_magnitude expects a 1-D signal, got shape {samples.shape}")
    if len(samples) < frame_len:
        raise ValueError(f"signal of {len(samples)} samples is shorter than one frame ({frame_len})")
    n_frames = (len(samples) - frame_len) // hop + 1
    window = hann_window(frame_len)
    frames = np.lib.stride_tricks.sliding_window_view(samples, frame_len)[:: hop][:n_frames]
    mag = np.abs(np.fft.rfft(frames * window, axis=1))
    return Spectrogram(mag, frame_len, hop, sample_rate)


def _as_matrix(s) -> np.ndarray:
    if isinstance(s, Spectrogram):
        return s.mag
    return np.asarray(s, dtype=np.float64)


def corr2d(s_gen, s_act) -> float:
    """Two-dimensional Pearson correlation between equal-shape matrices."""
    a = _as_matrix(s_gen)
    b = _as_matrix(s_act)
    if a.shape != b.shape:
        raise ValueError(f"corr2d: shapes differ {a.shape} vs {b.shape}")
    da = a - a.mean()
    db = b - b.mean()
    na = np.sqrt((da * da).sum())
    nb = np.sqrt((db * db).sum())
    if na == 0.0 or nb == 0.0:
        raise ValueError("corr2d: constant matrix has zero variance")
    return float((da * db).sum() / (na * nb))


# ---------------------------------------------------------------------------
# STOI


def _resample_linear(x: np.ndarray, fs_in: int, fs_out: int) -> np.ndarray:
    if fs_in == fs_out:
        return x
    n_out = int(round(len(x) * fs_out / fs_in))
    positions = np.arange(n_out) * (fs_in / fs_out)
    return np.interp(positions, np.arange(len(x)), x)


def _analysis_window(n: int) -> np.ndarray:
    # Symmetric Hann without its zero endpoints, as in the reference tooling.
    return np.hanning(n + 2)[1:-1]


def _frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n_frames = (len(x) - frame_len) // hop + 1
    return np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop][:n_frames]


def _remove_silent_frames(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames whose reference energy falls 40 dB under the loudest frame,
    rebuilding both signals by overlap-add of the kept frames."""
    w = _analysis_window(_STOI_FRAME)
    xf = _frame_signal(x, _STOI_FRAME, _STOI_HOP) * w
    yf = _frame_signal(y, _STOI_FRAME, _STOI_HOP) * w
    energies = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + np.finfo(np.float64).eps)
    mask = energies > energies.max() - _STOI_DYN_RANGE_DB
    xf = xf[mask]
    yf = yf[mask]
    n = (len(xf) - 1) * _STOI_HOP + _STOI_FRAME
    xs = np.zeros(n)
    ys = np.zeros(n)
    for i in range(len(xf)):
        xs[i * _STOI_HOP : i * _STOI_HOP + _STOI_FRAME] += xf[i]
        ys[i * _STOI_HOP : i * _STOI_HOP + _STOI_FRAME] += yf[i]
    return xs, ys


def _third_octave_bands(fs: int, nfft: int, n_bands: int, min_freq: float) -> np.ndarray:
    """Binary matrix (bands x bins) selecting DFT bins per one-third-octave band."""
    f = np.linspace(0.0, fs / 2.0, nfft // 2 + 1)
    k = np.arange(n_bands, dtype=np.float64)
    cf = min_freq * 2.0 ** (k / 3.0)
    lo = cf * 2.0 ** (-1.0 / 6.0)
    hi = cf * 2.0 ** (1.0 / 6.0)
    h = np.zeros((n_bands, len(f)))
    for j in range(n_bands):
        il = int(np.argmin(np.abs(f - lo[j])))
        ih = int(np.argmin(np.abs(f - hi[j])))
        h[j, il:ih] = 1.0
    return h


def _band_envelopes(x: np.ndarray, bands: np.ndarray) -> np.ndarray:
    """(frames x bands) one-third-octave magnitudes of a 10 kHz signal."""
    w = _analysis_window(_STOI_FRAME)
    frames = _frame_signal(x, _STOI_FRAME, _STOI_HOP) * w
    spec = np.fft.rfft(frames, n=_STOI_NFFT, axis=1)
    power = np.abs(spec) ** 2
    return np.sqrt(power @ bands.T)


def stoi(actual: np.ndarray, generated: np.ndarray, sample_rate: int) -> float:
    """Short-time objective intelligibility of ``generated`` against
    ``actual``, clamped to [0, 1].

    Both signals must have the same length and rate; analysis happens at
    10 kHz internally. Band-segment cells where either envelope is constant
    carry no intelligibility information and are excluded from the average.
    """
    x = np.asarray(actual, dtype=np.float64)
    y = np.asarray(generated, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"stoi: signals must be equal-length 1-D, got {x.shape} vs {y.shape}")
    if not np.abs(x).max() > 0.0:
        raise ValueError("stoi: actual signal is all silent")
    if not np.abs(y).max() > 0.0:
        raise ValueError("stoi: generated signal is all silent")

    x = _resample_linear(x, sample_rate, _STOI_FS)
    y = _resample_linear(y, sample_rate, _STOI_FS)
    if len(x) < _STOI_FRAME:
        raise ValueError(f"stoi: {len(x)} samples at 10 kHz is shorter than one frame")
    x, y = _remove_silent_frames(x, y)

    bands = _third_octave_bands(_STOI_FS, _STOI_NFFT, _STOI_NUM_BANDS, _STOI_MIN_FREQ)
    ex = _band_envelopes(x, bands)  # (frames, bands)
    ey = _band_envelopes(y, bands)
    n_frames = ex.shape[0]
    if n_frames < _STOI_MIN_SEG_FRAMES:
        raise ValueError(
            f"stoi: only {n_frames} analysis frames after silence removal, need {_STOI_MIN_SEG_FRAMES}"
        )
    # Clips shorter than one full 384 ms segment are scored on a single
    # segment spanning whatever frames they have.
    seg = min(_STOI_SEG_FRAMES, n_frames)

    clip_gain = 1.0 + 10.0 ** (-_STOI_BETA_DB / 20.0)
    total = 0.0
    count = 0
    for m in range(seg, n_frames + 1):
        xs = ex[m - seg : m].T  # (bands, seg)
        ys = ey[m - seg : m].T
        nx = np.linalg.norm(xs, axis=1)
        ny = np.linalg.norm(ys, axis=1)
        ok = ny > 0.0
        alpha = np.zeros_like(nx)
        alpha[ok] = nx[ok] / ny[ok]
        yn = np.minimum(ys * alpha[:, None], xs * clip_gain)
        xc = xs - xs.mean(axis=1, keepdims=True)
        yc = yn - yn.mean(axis=1, keepdims=True)
        sx = np.linalg.norm(xc, axis=1)
        sy = np.linalg.norm(yc, axis=1)
        valid = (sx > 0.0) & (sy > 0.0)
        if valid.any():
            d = (xc[valid] * yc[valid]).sum(axis=1) / (sx[valid] * sy[valid])
            total += d.sum()
            count += int(valid.sum())
    if count == 0:
        raise ValueError("stoi: no band segment carried enough variation to correlate")
    return float(np.clip(total / count, 0.0, 1.0))


# ---------------------------------------------------------------------------
# whole-set evaluation


@dataclass
class EvalRow:
    id: str
    corr2d: float
    stoi: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    @property
    def mean_corr2d(self) -> float:
        return float(np.mean([r.corr2d for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_stoi(self) -> float:
        return float(np.mean([r.stoi for r in self.rows])) if self.rows else float("nan")


def evaluate_set(root, manifest: DatasetManifest, generate_fn, split: str = "test") -> EvalReport:
    """Generate audio for every image of a split and score it against the
    ground-truth clip with corr2d (on the fixed spectrogram convention) and
    STOI.

    ``generate_fn`` maps (H, W, C) pixels in [0, 1] to a waveform of the
    manifest's padded length. Missing dataset files are collected as warnings
    and the remaining examples are still evaluated.
    """
    root = Path(root)
    report = EvalReport()
    for record in manifest.split(split):
        try:
            image, clip = load_example(root, record, manifest.l_s, manifest.sample_rate)
        except FileNotFoundError as exc:
            report.missing.append(f"{record.id}: {exc}")
            continue
        waveform = np.asarray(generate_fn(image.pixels), dtype=np.float64)
        if waveform.shape != clip.samples.shape:
            raise ValueError(
                f"{record.id}: generated {waveform.shape} does not match target {clip.samples.shape}"
            )
        s_act = stft_magnitude(clip.samples, manifest.sample_rate)
        s_gen = stft_magnitude(waveform, manifest.sample_rate)
        report.rows.append(
            EvalRow(
                id=record.id,
                corr2d=corr2d(s_gen, s_act),
                stoi=stoi(clip.samples, waveform, manifest.sample_rate),
            )
        )
    return report


def write_report(report: EvalReport, path) -> None:
    lines = [_REPORT_MAGIC]
    for row in report.rows:
        lines.append(f"row id={row.id} corr2d={row.corr2d:.6f} stoi={row.stoi:.6f}")
    for m in report.missing:
        lines.append(f"missing {m}")
    lines.append(
        f"summary count={len(report.rows)} missing={len(report.missing)} "
        f"mean_corr2d={report.mean_corr2d:.6f} mean_stoi={report.mean_stoi:.6f}"
    )
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path) -> EvalReport:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _REPORT_MAGIC:
        raise ValueError(f"{path}: not an evaluation report (bad magic line)")
    report = EvalReport()
    for line in lines[1:]:
        if line.startswith("row "):
            fields = dict(part.split("=", 1) for part in line[4:].split())
            report.rows.append(EvalRow(fields["id"], float(fields["corr2d"]), float(fields["stoi"])))
        elif line.startswith("missing "):
            report.missing.append(line[len("missing "):])
    return report
