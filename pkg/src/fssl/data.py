"""Synthetic device-keyed audio corpora, WAV manifests, and user partitions.

Timeline: ``days`` consecutive 24-hour days. The first ``server_days`` form the
server (internal testing) period; the rest form the client period, whose last
``eval_days`` are held out for evaluation. Every device records
``clips_per_device_day`` clips per day and each clip is routed by the
device's role:

========  ==============  ===========================  ==================
role      server period   client period (training)      client period (held out)
========  ==============  ===========================  ==================
internal  server          test                          test
overlap   server          client                        test
public    test            client                        test
holdout   test            test                          test
========  ==============  ===========================  ==================

so with I/U/T derived from the server and client splits, ``overlap`` devices
form I, ``public`` devices form U and ``holdout`` devices form T. Internal
testers use quiet, well-calibrated hardware; every other device draws its
channel from a much wider range.
"""

from __future__ import annotations

import json
import math
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import (ConfigError, EmptyCorpus, MalformedRow, MissingAudio,
                     UnsupportedAudio)
from .features import SAMPLE_RATE, AudioClip

DAY = 86400
SPLITS = ("server", "client", "test")
ROLES = ("internal", "overlap", "public", "holdout")


@dataclass(frozen=True)
class DeviceProfile:
    dsn: str
    role: str
    noise_floor_db: float
    channel_gain: float
    channel_tilt: float  # dB per octave around 1 kHz
    event_rate: float
    event_pitch_hz: float
    hum_hz: float = 0.0
    hum_db: float = -120.0

    def __post_init__(self):
        if not 0.0 <= self.event_rate <= 1.0:
            raise ConfigError(f"event_rate {self.event_rate} outside [0, 1]", self.dsn)
        if self.channel_gain <= 0:
            raise ConfigError("channel_gain must be positive", self.dsn)


@dataclass(frozen=True)
class GenConfig:
    n_devices: int = 50
    days: int = 26
    server_days: int = 3
    eval_days: int = 3
    clips_per_device_day: int = 2
    clip_seconds: float = 2.0
    sample_rate: int = SAMPLE_RATE
    event_rate: float = 0.3
    event_rate_spread: float = 0.15
    holdout_fraction: float = 0.2
    client_fraction: float = 0.6
    overlap_fraction: float = 0.3
    distractor_rate: float = 0.5
    event_seconds: tuple = (1.0, 1.5)
    am_hz: float = 4.0
    harmonics: int = 3
    snr_db: tuple = (0.0, 12.0)
    internal_noise_db: tuple = (-45.0, -38.0)
    internal_gain: tuple = (0.8, 1.25)
    internal_tilt: tuple = (-0.5, 0.5)
    public_noise_db: tuple = (-40.0, -22.0)
    public_gain: tuple = (0.25, 4.0)
    public_tilt: tuple = (-4.0, 4.0)
    public_hum_db: tuple = (-40.0, -20.0)
    pitch_hz: tuple = (300.0, 1200.0)
    start_timestamp: int = 1614556800  # 2021-03-01T00:00:00Z

    def validate(self):
        if self.n_devices <= 0:
            raise ConfigError("need at least one device", "n_devices")
        if self.days <= 0 or self.clips_per_device_day <= 0:
            raise ConfigError("days and clips_per_device_day must be positive")
        if not 0 < self.server_days < self.days:
            raise ConfigError("server period must leave room for a client period", "server_days")
        if not 0 <= self.eval_days < self.days - self.server_days:
            raise ConfigError("eval_days must leave at least one client training day", "eval_days")
        for name in ("event_rate", "holdout_fraction", "client_fraction", "overlap_fraction", "distractor_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"must lie in [0, 1], got {v}", name)
        if self.holdout_fraction + self.client_fraction > 1.0:
            raise ConfigError("holdout_fraction + client_fraction exceeds 1")
        if self.clip_seconds * self.sample_rate < 400:
            raise ConfigError("clips shorter than one analysis window", "clip_seconds")

    @property
    def client_training_days(self) -> int:
        return self.days - self.server_days - self.eval_days


@dataclass(frozen=True)
class UnlabeledClip:
    """What a device holds locally: audio and provenance, no label field."""

    samples: np.ndarray
    sample_rate: int
    dsn: str
    timestamp: int


@dataclass(eq=False)
class CorpusSplit:
    server_clips: List[AudioClip]
    client_clips: Dict[str, List[AudioClip]]
    test_clips: List[AudioClip]
    profiles: Dict[str, DeviceProfile] = field(default_factory=dict)
    gen_config: Optional[GenConfig] = None
    seed: Optional[int] = None

    def dsns(self, split):
        if split == "server":
            return {c.dsn for c in self.server_clips}
        if split == "client":
            return {d for d, clips in self.client_clips.items() if clips}
        if split == "test":
            return {c.dsn for c in self.test_clips}
        raise ValueError(split)

    def all_dsns(self):
        return self.dsns("server") | self.dsns("client") | self.dsns("test")

    def iter_clips(self):
        """(split, clip) in a stable order."""
        for c in self.server_clips:
            yield "server", c
        for d in sorted(self.client_clips):
            for c in self.client_clips[d]:
                yield "client", c
        for c in self.test_clips:
            yield "test", c

    def __len__(self):
        return len(self.server_clips) + sum(len(v) for v in self.client_clips.values()) + len(self.test_clips)

    def client_view(self) -> Dict[str, List[UnlabeledClip]]:
        """Client streams as the devices see them: labels stripped."""
        return {
            d: [UnlabeledClip(c.samples, c.sample_rate, c.dsn, c.timestamp) for c in clips]
            for d, clips in sorted(self.client_clips.items())
        }

    def client_period_start(self) -> int:
        ts = [c.timestamp for clips in self.client_clips.values() for c in clips]
        if not ts:
            raise EmptyCorpus("no client clips")
        return min(ts) - (min(ts) % DAY)


@dataclass(frozen=True)
class PartitionSpec:
    I: frozenset
    U: frozenset
    T: frozenset

    def of(self, dsn):
        for name in ("I", "U", "T"):
            if dsn in getattr(self, name):
                return name
        return None


# ---------------------------------------------------------------- synthesis

def _assign_roles(cfg: GenConfig, rng) -> List[str]:
    n = cfg.n_devices
    n_hold = int(round(cfg.holdout_fraction * n))
    n_client = int(round(cfg.client_fraction * n))
    n_client = min(n_client, n - n_hold)
    n_overlap = int(round(cfg.overlap_fraction * n_client))
    roles = (["holdout"] * n_hold + ["overlap"] * n_overlap
             + ["public"] * (n_client - n_overlap) + ["internal"] * (n - n_hold - n_client))
    return [roles[i] for i in rng.permutation(n)]


def _draw_profile(cfg: GenConfig, dsn, role, rng) -> DeviceProfile:
    rate = float(np.clip(rng.uniform(cfg.event_rate - cfg.event_rate_spread,
                                     cfg.event_rate + cfg.event_rate_spread), 0.0, 1.0))
    pitch = float(np.exp(rng.uniform(*np.log(cfg.pitch_hz))))
    if role in ("internal", "overlap"):
        noise = rng.uniform(*cfg.internal_noise_db)
        gain = float(np.exp(rng.uniform(*np.log(cfg.internal_gain))))
        tilt = rng.uniform(*cfg.internal_tilt)
        hum_hz, hum_db = 0.0, -120.0
    else:
        noise = rng.uniform(*cfg.public_noise_db)
        gain = float(np.exp(rng.uniform(*np.log(cfg.public_gain))))
        tilt = rng.uniform(*cfg.public_tilt)
        hum_hz = float(rng.choice([100.0, 120.0, 150.0, 180.0]))
        hum_db = rng.uniform(*cfg.public_hum_db)
    return DeviceProfile(dsn, role, float(noise), gain, float(tilt), rate, pitch, hum_hz, float(hum_db))


def device_profiles(cfg: GenConfig, seed: int) -> Dict[str, DeviceProfile]:
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD5]))
    roles = _assign_roles(cfg, rng)
    out = {}
    for i, role in enumerate(roles):
        dsn = f"DSN{i:05d}"
        out[dsn] = _draw_profile(cfg, dsn, role, rng)
    return out


def _colored_noise(n, sr, tilt_db_oct, rng):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sr)
    f[0] = f[1]
    spec *= 10.0 ** (tilt_db_oct * np.log2(f / 1000.0) / 20.0)
    x = np.fft.irfft(spec, n)
    return x / (np.sqrt(np.mean(x * x)) + 1e-12)


def render_clip(profile: DeviceProfile, cfg: GenConfig, rng, event: bool, distractor: bool):
    """Synthesize one clip for a device; event and distractor are mutually exclusive."""
    sr = cfg.sample_rate
    n = int(round(cfg.clip_seconds * sr))
    t = np.arange(n) / sr
    noise_rms = 10.0 ** (profile.noise_floor_db / 20.0)
    x = noise_rms * _colored_noise(n, sr, profile.channel_tilt, rng)
    if profile.hum_hz > 0:
        hum = 10.0 ** (profile.hum_db / 20.0) * math.sqrt(2.0)
        x += hum * np.sin(2 * math.pi * profile.hum_hz * t + rng.uniform(0, 2 * math.pi))
    if event or distractor:
        dur = min(rng.uniform(*cfg.event_seconds), cfg.clip_seconds)
        start = rng.uniform(0.0, cfg.clip_seconds - dur)
        seg = (t >= start) & (t < start + dur)
        tt = t[seg] - start
        pitch = profile.event_pitch_hz * rng.uniform(0.97, 1.03)
        level = noise_rms * 10.0 ** (rng.uniform(*cfg.snr_db) / 20.0)
        if event:
            # harmonic complex with 1/h amplitudes, normalized to unit RMS
            amps = 1.0 / np.arange(1, cfg.harmonics + 1)
            carrier = sum(a * np.sin(2 * math.pi * h * pitch * tt + rng.uniform(0, 2 * math.pi))
                          for h, a in enumerate(amps, start=1))
            carrier /= math.sqrt(np.sum(amps**2))
        else:
            carrier = np.sin(2 * math.pi * pitch * tt + rng.uniform(0, 2 * math.pi))
        if event:
            env = 0.5 * (1.0 - np.cos(2 * math.pi * cfg.am_hz * tt))
            amp = level * math.sqrt(8.0 / 3.0)  # RMS of full-depth AM matches a steady tone
        else:
            env = np.ones_like(tt)
            amp = level * math.sqrt(2.0)
        ramp = np.minimum(1.0, np.minimum(tt, dur - tt) / 0.02)
        x[seg] += amp * env * ramp * carrier
    x *= profile.channel_gain
    return np.clip(x, -1.0, 1.0)


def _clip_rng(seed, dev_idx, day, k):
    return np.random.default_rng(np.random.SeedSequence([seed, 0xC1, dev_idx, day, k]))


def _make_clip(cfg, profile, seed, dev_idx, day, k, labeled=True):
    rng = _clip_rng(seed, dev_idx, day, k)
    event = bool(rng.random() < profile.event_rate)
    distractor = (not event) and bool(rng.random() < cfg.distractor_rate)
    samples = render_clip(profile, cfg, rng, event, distractor)
    slot = DAY // (cfg.clips_per_device_day * 8)
    ts = cfg.start_timestamp + day * DAY + (k % (DAY // slot)) * slot + int(rng.integers(0, slot))
    return AudioClip(samples, cfg.sample_rate, profile.dsn, int(ts), int(event) if labeled else None)


def _route(role, day, cfg: GenConfig):
    in_server = day < cfg.server_days
    held_out = day >= cfg.days - cfg.eval_days
    if role == "holdout":
        return "test"
    if in_server:
        return "server" if role in ("internal", "overlap") else "test"
    if role == "internal" or held_out:
        return "test"
    return "client"


def synth_corpus(cfg: GenConfig = GenConfig(), seed: int = 0) -> CorpusSplit:
    """Deterministic non-IID corpus; see the module docstring for routing."""
    profiles = device_profiles(cfg, seed)
    server, test = [], []
    client = {d: [] for d, p in profiles.items() if p.role in ("overlap", "public")}
    for dev_idx, (dsn, prof) in enumerate(profiles.items()):
        for day in range(cfg.days):
            split = _route(prof.role, day, cfg)
            for k in range(cfg.clips_per_device_day):
                clip = _make_clip(cfg, prof, seed, dev_idx, day, k)
                if split == "server":
                    server.append(clip)
                elif split == "client":
                    client[dsn].append(clip)
                else:
                    test.append(clip)
    return CorpusSplit(server, client, test, profiles, cfg, seed)


def augment_client(split: CorpusSplit, multiplier: int) -> CorpusSplit:
    """Grow each device's client stream to ``multiplier`` x with unlabeled clips.

    Extra clips come from the same devices and days; clip k of a device-day
    is identical across multipliers, so 2x is contained in 4x and 4x in 8x.
    """
    if multiplier < 1:
        raise ConfigError("multiplier must be >= 1", "multiplier")
    if multiplier == 1:
        return split
    cfg, seed = split.gen_config, split.seed
    if cfg is None or not split.profiles:
        raise ConfigError("augmentation needs a synthetic corpus with device profiles")
    dev_index = {d: i for i, d in enumerate(split.profiles)}
    base = cfg.clips_per_device_day
    client = {}
    for dsn, clips in split.client_clips.items():
        prof = split.profiles[dsn]
        days = sorted({(c.timestamp - cfg.start_timestamp) // DAY for c in clips})
        extra = [
            _make_clip(cfg, prof, seed, dev_index[dsn], day, k, labeled=False)
            for day in days
            for k in range(base, base * multiplier)
        ]
        by_day = {}
        for c in clips + extra:
            by_day.setdefault((c.timestamp - cfg.start_timestamp) // DAY, []).append(c)
        # within a day keep generation order so client_subset can take prefixes
        client[dsn] = [c for day in sorted(by_day) for c in by_day[day]]
    return replace(split, client_clips=client)


def client_subset(split: CorpusSplit, multiplier: int) -> CorpusSplit:
    """Shrink an augmented corpus back to ``multiplier`` x its base client volume."""
    cfg = split.gen_config
    keep = cfg.clips_per_device_day * multiplier
    client = {}
    for dsn, clips in split.client_clips.items():
        counts, kept = {}, []
        for c in clips:
            day = (c.timestamp - cfg.start_timestamp) // DAY
            if counts.get(day, 0) < keep:
                kept.append(c)
            counts[day] = counts.get(day, 0) + 1
        client[dsn] = kept
    return replace(split, client_clips=client)


def derive_partitions(split: CorpusSplit) -> PartitionSpec:
    server = split.dsns("server")
    client = split.dsns("client")
    universe = split.all_dsns()
    return PartitionSpec(
        I=frozenset(server & client),
        U=frozenset((universe - server) & client),
        T=frozenset((universe - server) - client),
    )


# ---------------------------------------------------------------- WAV / manifest

def write_wav(path, samples, sample_rate=SAMPLE_RATE):
    pcm = np.round(np.clip(samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def read_wav(path, row=None):
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1 or w.getsampwidth() != 2:
                raise UnsupportedAudio(f"{path}: need 16-bit PCM mono", row)
            if w.getframerate() != SAMPLE_RATE:
                raise UnsupportedAudio(f"{path}: sample rate {w.getframerate()} != {SAMPLE_RATE}", row)
            raw = w.readframes(w.getnframes())
    except FileNotFoundError:
        raise MissingAudio(f"{path}: no such file", row) from None
    except wave.Error as exc:
        raise UnsupportedAudio(f"{path}: {exc}", row) from None
    return np.frombuffer(raw, "<i2").astype(np.float64) / 32767.0


def export_manifest(split: CorpusSplit, out_dir) -> Path:
    """Write every clip as a WAV plus a JSON-lines manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (name, clip) in enumerate(split.iter_clips()):
        rel = f"wav/{i:06d}_{clip.dsn}.wav"
        write_wav(out_dir / rel, clip.samples, clip.sample_rate)
        lines.append(json.dumps({"path": rel, "dsn": clip.dsn, "timestamp": clip.timestamp,
                                 "label": clip.label, "split": name}))
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return manifest


def load_manifest(path) -> CorpusSplit:
    path = Path(path)
    if not path.exists():
        raise MissingAudio(f"manifest {path} not found")
    server, test, client = [], [], {}
    for row, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRow(f"invalid JSON ({exc.msg})", row) from None
        if not isinstance(rec, dict):
            raise MalformedRow("expected a JSON object", row)
        missing = {"path", "dsn", "timestamp", "label", "split"} - set(rec)
        if missing:
            raise MalformedRow(f"missing fields {sorted(missing)}", row)
        split = rec["split"]
        if split not in SPLITS:
            raise MalformedRow(f"unknown split {split!r}", row)
        label = rec["label"]
        if label not in (0, 1, None) or isinstance(label, bool):
            raise MalformedRow(f"label must be 0, 1 or null, got {label!r}", row)
        if split in ("server", "test") and label is None:
            raise MalformedRow(f"{split} clips must be labeled", row)
        if not isinstance(rec["timestamp"], int) or not isinstance(rec["dsn"], str):
            raise MalformedRow("timestamp must be an integer and dsn a string", row)
        wav_path = Path(rec["path"])
        if not wav_path.is_absolute():
            wav_path = path.parent / wav_path
        samples = read_wav(wav_path, row)
        if samples.size == 0:
            raise UnsupportedAudio(f"{wav_path}: empty audio", row)
        clip = AudioClip(samples, SAMPLE_RATE, rec["dsn"], rec["timestamp"], label)
        if split == "server":
            server.append(clip)
        elif split == "test":
            test.append(clip)
        else:
            client.setdefault(clip.dsn, []).append(clip)
    if not server and not client and not test:
        raise EmptyCorpus(f"manifest {path} lists no clips")
    for d in client:
        client[d].sort(key=lambda c: c.timestamp)
    return CorpusSplit(server, dict(sorted(client.items())), test)
