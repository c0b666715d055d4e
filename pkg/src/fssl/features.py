"""Log filter-bank energy (LFBE) front-end and global CMVN."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimMismatch, EmptyCorpus, FormatError, ShortClip

SAMPLE_RATE = 16000
LOG_FLOOR = 1e-10
VAR_FLOOR = 1e-8

_CMVN_MAGIC = b"CMVN"
_CMVN_VERSION = 1


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    dsn: str
    timestamp: int
    label: Optional[int] = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.label not in (None, 0, 1):
            raise ValueError(f"label must be 0, 1 or None, got {self.label!r}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = SAMPLE_RATE
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 20
    n_fft: int = 512
    f_min: float = 0.0
    f_max: Optional[float] = None
    log_floor: float = LOG_FLOOR

    @property
    def win_samples(self) -> int:
        return int(round(self.sample_rate * self.frame_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))


@dataclass(frozen=True, eq=False)
class LfbeMatrix:
    values: np.ndarray
    frame_ms: float = 25.0
    hop_ms: float = 10.0

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class CmvnStats:
    mean: np.ndarray
    variance: np.ndarray
    count: int

    def __post_init__(self):
        if self.mean.shape != self.variance.shape or self.mean.ndim != 1:
            raise DimMismatch("mean and variance must be equal-length vectors")
        if np.any(self.variance < 0):
            raise ValueError("variance must be non-negative")
        if self.count <= 0:
            raise ValueError("count must be positive")

    @property
    def dim(self) -> int:
        return self.mean.size

    def to_bytes(self) -> bytes:
        head = _CMVN_MAGIC + struct.pack("<HIQ", _CMVN_VERSION, self.dim, self.count)
        return head + self.mean.astype("<f8").tobytes() + self.variance.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CmvnStats":
        if blob[:4] != _CMVN_MAGIC:
            raise FormatError("not a CMVN record")
        version, dim, count = struct.unpack_from("<HIQ", blob, 4)
        if version != _CMVN_VERSION:
            raise FormatError(f"unsupported CMVN version {version}")
        off = 4 + struct.calcsize("<HIQ")
        if len(blob) != off + 16 * dim:
            raise FormatError("truncated CMVN record")
        mean = np.frombuffer(blob, "<f8", dim, off).astype(np.float64)
        var = np.frombuffer(blob, "<f8", dim, off + 8 * dim).astype(np.float64)
        return cls(mean, var, int(count))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CmvnStats":
        return cls.from_bytes(Path(path).read_bytes())


def num_frames(num_samples: int, win_samples: int, hop_samples: int) -> int:
    if num_samples < win_samples:
        return 0
    return (num_samples - win_samples) // hop_samples + 1


def frame_signal(clip: AudioClip, frame_ms: float = 25.0, hop_ms: float = 10.0) -> np.ndarray:
    """Slice a clip into overlapping windows; returns a (T, win_samples) view."""
    win = int(round(clip.sample_rate * frame_ms / 1000.0))
    hop = int(round(clip.sample_rate * hop_ms / 1000.0))
    if clip.samples.size < win:
        raise ShortClip(
            f"clip has {clip.samples.size} samples, need at least {win} for one window"
        )
    return sliding_window_view(clip.samples, win)[::hop]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, sample_rate: int, f_min=0.0, f_max=None) -> np.ndarray:
    f_max = sample_rate / 2.0 if f_max is None else f_max
    pts = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    return mel_to_hz(pts[1:-1])


_FILTERBANK_CACHE: dict = {}


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, f_min=0.0, f_max=None) -> np.ndarray:
    """HTK-scale triangular filters, shape (n_mels, n_fft // 2 + 1)."""
    key = (n_mels, n_fft, sample_rate, f_min, f_max)
    fb = _FILTERBANK_CACHE.get(key)
    if fb is not None:
        return fb
    f_max_ = sample_rate / 2.0 if f_max is None else f_max
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max_), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    _FILTERBANK_CACHE[key] = fb
    return fb


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the usual STFT choice
    return 0.5 - 0.5 * np.cos(2.0 * math.pi * np.arange(n) / n)


def lfbe(clip: AudioClip, config: FeatureConfig = FeatureConfig()) -> LfbeMatrix:
    """Log mel energies of a clip, one row per 25 ms frame."""
    if clip.sample_rate != config.sample_rate:
        raise ValueError(
            f"clip sample rate {clip.sample_rate} != configured {config.sample_rate}"
        )
    frames = frame_signal(clip, config.frame_ms, config.hop_ms)
    win = frames.shape[1]
    if win > config.n_fft:
        raise ValueError(f"window of {win} samples exceeds n_fft={config.n_fft}")
    spec = np.fft.rfft(frames * _hann(win), n=config.n_fft, axis=1)
    power = (spec.real**2 + spec.imag**2) / config.n_fft
    fb = mel_filterbank(config.n_mels, config.n_fft, config.sample_rate, config.f_min, config.f_max)
    energies = power @ fb.T
    values = np.log(np.maximum(energies, config.log_floor))
    return LfbeMatrix(values, config.frame_ms, config.hop_ms)


def compute_cmvn(corpus: Iterable[LfbeMatrix]) -> CmvnStats:
    """Per-dimension mean and population variance over every frame of the corpus."""
    mats = [m.values if isinstance(m, LfbeMatrix) else np.asarray(m) for m in corpus]
    if not mats:
        raise EmptyCorpus("CMVN needs at least one feature matrix")
    dims = {m.shape[1] for m in mats}
    if len(dims) != 1:
        raise DimMismatch(f"mixed feature dimensions {sorted(dims)}")
    stacked = np.concatenate(mats, axis=0)
    mean = stacked.mean(axis=0)
    variance = ((stacked - mean) ** 2).mean(axis=0)
    return CmvnStats(mean, variance, stacked.shape[0])


def apply_cmvn(m: LfbeMatrix, stats: CmvnStats, var_floor: float = VAR_FLOOR) -> LfbeMatrix:
    if m.n_mels != stats.dim:
        raise DimMismatch(f"features have {m.n_mels} dims, stats have {stats.dim}")
    values = (m.values - stats.mean) / np.sqrt(stats.variance + var_floor)
    return LfbeMatrix(values, m.frame_ms, m.hop_ms)


def featurize(clips: Sequence[AudioClip], config: FeatureConfig, stats: CmvnStats) -> list:
    """lfbe + apply_cmvn for a batch of clips; returns plain (T, M) arrays."""
    return [apply_cmvn(lfbe(c, config), stats).values for c in clips]
