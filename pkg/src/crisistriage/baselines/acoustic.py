"""Reduced acoustic front end: four frame-level descriptors and their functionals.

Descriptors per 25 ms frame (10 ms hop): autocorrelation pitch (0 when
unvoiced), RMS energy, zero-crossing rate per sample and spectral centroid.
Six functionals per descriptor give a 24-dimensional call vector computed over
caller frames only.
"""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..corpus import Call, Segment

FRAME_S = 0.025
HOP_S = 0.010
F0_MIN_HZ, F0_MAX_HZ = 60.0, 500.0
VOICING_THRESHOLD = 0.45
MIN_RMS = 1e-4

LLD_NAMES = ("f0_hz", "rms_energy", "zero_crossing_rate", "spectral_centroid_hz")
FUNCTIONAL_NAMES = ("mean", "std", "p20", "p50", "p80", "range")
FEATURE_NAMES = tuple(f"{lld}_{fn}" for lld in LLD_NAMES for fn in FUNCTIONAL_NAMES)


class AcousticError(ValueError):
    pass


@dataclass(frozen=True)
class FrameLlds:
    """Column-per-descriptor frame table; row ``t`` starts at ``t * hop_s`` seconds."""

    f0_hz: np.ndarray
    rms_energy: np.ndarray
    zero_crossing_rate: np.ndarray
    spectral_centroid_hz: np.ndarray
    hop_s: float = HOP_S
    frame_s: float = FRAME_S

    def __len__(self) -> int:
        return len(self.f0_hz)

    def matrix(self) -> np.ndarray:
        return np.column_stack([getattr(self, name) for name in LLD_NAMES])

    @property
    def frame_centers_s(self) -> np.ndarray:
        return np.arange(len(self)) * self.hop_s + self.frame_s / 2


def _frames(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    if len(x) < frame_len:
        x = np.pad(x, (0, frame_len - len(x)))
    n = 1 + (len(x) - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def _pitch(frames: np.ndarray, sr: int) -> np.ndarray:
    """Normalised-autocorrelation pitch per frame with parabolic peak refinement; 0 when unvoiced."""
    x = frames - frames.mean(axis=1, keepdims=True)
    n_frames, n = x.shape
    f0 = np.zeros(n_frames)
    lag_min = max(1, int(np.floor(sr / F0_MAX_HZ)))
    lag_max = min(n - 2, int(np.ceil(sr / F0_MIN_HZ)))
    if lag_max <= lag_min + 1 or n_frames == 0:
        return f0
    spec = np.fft.rfft(x, 2 * n, axis=1)
    ac = np.fft.irfft(spec * np.conj(spec), axis=1)[:, :n]
    sq = x**2
    head = np.cumsum(sq, axis=1)  # head[:, t] = sum x[:t+1]^2
    tail = np.cumsum(sq[:, ::-1], axis=1)[:, ::-1]  # tail[:, t] = sum x[t:]^2
    lags = np.arange(lag_min, lag_max + 1)
    denom = np.sqrt(head[:, n - 1 - lags] * tail[:, lags])
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, ac[:, lags] / np.where(denom > 0, denom, 1.0), 0.0)
    best = r.max(axis=1)
    for row in np.flatnonzero(best >= VOICING_THRESHOLD):
        rr = r[row]
        # earliest lag close to the global peak guards against octave errors
        k = int(np.flatnonzero(rr >= 0.9 * best[row])[0])
        while k + 1 < len(rr) and rr[k + 1] > rr[k]:
            k += 1
        shift = 0.0
        if 0 < k < len(rr) - 1:
            a, b, c = rr[k - 1], rr[k], rr[k + 1]
            den = a - 2 * b + c
            if den != 0:
                shift = float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))
        f0[row] = sr / (lags[k] + shift)
    return f0


def compute_llds(samples: Sequence[float] | np.ndarray, sample_rate: int) -> FrameLlds:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise AcousticError("waveform must be a non-empty mono signal")
    if not np.isfinite(x).all():
        raise AcousticError("waveform contains non-finite samples")
    if sample_rate < 8000:
        raise AcousticError(f"sample rate must be >= 8000 Hz, got {sample_rate}")
    frame_len = int(round(FRAME_S * sample_rate))
    hop = int(round(HOP_S * sample_rate))
    frames = _frames(x, frame_len, hop)
    rms = np.sqrt((frames**2).mean(axis=1))
    signs = np.signbit(frames)
    zcr = (signs[:, 1:] != signs[:, :-1]).sum(axis=1) / (frame_len - 1)
    zcr = np.where(rms > 0, zcr, 0.0)
    mag = np.abs(np.fft.rfft(frames * np.hanning(frame_len), axis=1))
    freqs = np.fft.rfftfreq(frame_len, 1.0 / sample_rate)
    total = mag.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        centroid = np.where(total > 0, (mag * freqs).sum(axis=1) / total, 0.0)
    f0 = np.where(rms > MIN_RMS, _pitch(frames, sample_rate), 0.0)
    return FrameLlds(f0, rms, zcr, centroid, hop / sample_rate, frame_len / sample_rate)


def caller_frame_mask(llds: FrameLlds, segments: Iterable[Segment], time_scale: float = 1.0) -> np.ndarray:
    """True for frames whose centre falls inside a caller segment (times scaled by ``time_scale``)."""
    centers = llds.frame_centers_s
    mask = np.zeros(len(centers), dtype=bool)
    for seg in segments:
        if seg.speaker == "caller":
            mask |= (centers >= seg.start_s * time_scale) & (centers < seg.end_s * time_scale)
    return mask


def functionals(llds: FrameLlds, caller_mask: Sequence[bool] | np.ndarray | None = None) -> np.ndarray:
    """mean, population std, 20/50/80th linear-interpolated percentiles and range per descriptor."""
    m = llds.matrix()
    mask = np.ones(len(m), dtype=bool) if caller_mask is None else np.asarray(caller_mask, dtype=bool)
    if len(mask) != len(m):
        raise AcousticError(f"mask length {len(mask)} does not match {len(m)} frames")
    sel = m[mask]
    if len(sel) == 0:
        raise AcousticError("no caller frames to summarise")
    p20, p50, p80 = np.percentile(sel, [20, 50, 80], axis=0)
    stats = np.stack([sel.mean(0), sel.std(0), p20, p50, p80, sel.max(0) - sel.min(0)], axis=1)
    return stats.reshape(-1)


# --- I/O --------------------------------------------------------------------


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """16-bit PCM WAV as float samples in [-1, 1); stereo is averaged to mono."""
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise AcousticError(f"{path}: only 16-bit PCM is supported")
        sr, ch = w.getframerate(), w.getnchannels()
        raw = w.readframes(w.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    if ch > 1:
        data = data.reshape(-1, ch).mean(axis=1)
    return data, sr


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def read_feature_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Precomputed call vectors: header ``call_id,f1,..,fD`` then one row per call."""
    out: dict[str, np.ndarray] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "call_id" or len(header) < 2:
            raise AcousticError(f"{path}: header must start with call_id followed by feature columns")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise AcousticError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                vec = np.array([float(v) for v in row[1:]])
            except ValueError as exc:
                raise AcousticError(f"{path}:{lineno}: {exc}") from None
            if row[0] in out:
                raise AcousticError(f"{path}:{lineno}: duplicate call_id {row[0]!r}")
            out[row[0]] = vec
    return out


def write_feature_csv(path: str | Path, features: dict[str, np.ndarray], names: Sequence[str] = FEATURE_NAMES) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["call_id", *names])
        for cid in sorted(features):
            w.writerow([cid, *(repr(float(v)) for v in features[cid])])


# --- synthetic audio --------------------------------------------------------

# caller (pitch, loudness, noise level) per crisis level
_VOICE = {0: (170.0, 0.20, 0.01), 1: (210.0, 0.30, 0.03), 2: (260.0, 0.45, 0.06)}
_OPERATOR_VOICE = (120.0, 0.25, 0.01)


def synth_call_audio(call: Call, sample_rate: int = 8000, time_scale: float = 0.02, seed: int = 0) -> np.ndarray:
    """Harmonic tones standing in for speech, with level-dependent caller prosody.

    Segment times are multiplied by ``time_scale`` so hour-long calls stay a few
    seconds of audio; pass the same factor to ``caller_frame_mask``.
    """
    rng = np.random.default_rng([seed, *call.call_id.encode("utf-8")])
    n = int(np.ceil(call.segments[-1].end_s * time_scale * sample_rate)) + 1
    out = np.zeros(n)
    for seg in call.segments:
        f0, amp, noise = _VOICE[call.label] if seg.speaker == "caller" else _OPERATOR_VOICE
        a = int(seg.start_s * time_scale * sample_rate)
        b = max(a + 1, int(seg.end_s * time_scale * sample_rate))
        t = np.arange(b - a) / sample_rate
        pitch = f0 * (1.0 + 0.05 * rng.standard_normal())
        wave_ = sum(np.sin(2 * np.pi * h * pitch * t) / h for h in (1, 2, 3))
        out[a:b] += amp * rng.uniform(0.8, 1.2) * wave_ / 1.8 + noise * rng.standard_normal(b - a)
    return out


def call_features(samples: np.ndarray, sample_rate: int, call: Call, time_scale: float = 1.0) -> np.ndarray:
    llds = compute_llds(samples, sample_rate)
    return functionals(llds, caller_frame_mask(llds, call.segments, time_scale))
