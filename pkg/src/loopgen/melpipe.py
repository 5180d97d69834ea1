"""Loop ingestion pipeline: bar segmentation, tempo normalization, log-mel clips.

Every clip that leaves this module is a (64, 200) log-mel matrix in [-1, 1]
covering one 4/4 bar at 120 BPM (2 s at 16 kHz). The synthetic corpus
generator lives here too so the rest of the system can be exercised without
any external audio.
"""

import hashlib
import json
import wave
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from . import dsp
from .errors import (
    ConfigError,
    ExtremeStretch,
    InputError,
    NoBeats,
    SegmentTooShort,
    ShapeError,
    TooFewClips,
)

SAMPLE_RATE = 16000
N_FFT = 512
HOP = 160
N_MELS = 64
N_FRAMES = 200
CLIP_SAMPLES = 32000  # 2 s at 16 kHz
TARGET_BPM = 120.0
FMIN = 0.0
FMAX = 8000.0
BEATS_PER_BAR = 4
MIN_SEGMENT_SECONDS = 0.1
PIPELINE_VERSION = "1"
DEFAULT_SPLIT = (0.8, 0.1, 0.1)

_MEL_FB = None


def mel_fb() -> np.ndarray:
    """The module-wide (64, 257) area-normalized filterbank, built once."""
    global _MEL_FB
    if _MEL_FB is None:
        _MEL_FB = dsp.mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE, FMIN, FMAX)
    return _MEL_FB


@dataclass
class AudioLoop:
    """A mono waveform with the metadata the pipeline needs."""

    samples: np.ndarray
    sample_rate: int
    bpm: float
    tag: str = ""
    source_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InputError("AudioLoop needs a non-empty 1-D sample array")
        if self.sample_rate <= 0:
            raise InputError(f"sample_rate must be positive, got {self.sample_rate}")
        if not (40.0 <= self.bpm <= 300.0):
            raise InputError(f"bpm {self.bpm} outside the supported range [40, 300]")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("AudioLoop samples must be finite")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelClip:
    """One bar as a (64, 200) log-mel matrix normalized to [-1, 1]."""

    values: np.ndarray
    tag: str = ""
    bpm: float = TARGET_BPM

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != (N_MELS, N_FRAMES):
            raise ShapeError(
                f"MelClip must be ({N_MELS}, {N_FRAMES}), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InputError("MelClip values must be finite")
        if self.values.min() < -1.0 - 1e-6 or self.values.max() > 1.0 + 1e-6:
            raise InputError("MelClip values must lie in [-1, 1]")


@dataclass
class Chunk:
    """Half of a clip along time: frames [0, 100) or [100, 200)."""

    values: np.ndarray
    index: str  # "first" | "second"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != (N_MELS, N_FRAMES // 2):
            raise ShapeError(
                f"Chunk must be ({N_MELS}, {N_FRAMES // 2}), got {self.values.shape}")
        if self.index not in ("first", "second"):
            raise InputError(f"chunk index must be 'first' or 'second', got {self.index!r}")


@dataclass
class NormStats:
    """Global log-mel min/max used for the [-1, 1] normalization.

    The floor is pinned at 0.0 (the log1p of zero energy) so digital silence
    always maps to exactly -1 regardless of the corpus.
    """

    lo: float = 0.0
    hi: float = 1.0

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        span = max(self.hi - self.lo, 1e-12)
        out = -1.0 + 2.0 * (raw - self.lo) / span
        return np.clip(out, -1.0, 1.0)

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        """Map [-1, 1] values back to mel-energy (inverse of log1p + min-max)."""
        raw = self.lo + (np.asarray(values, dtype=np.float64) + 1.0) / 2.0 * (self.hi - self.lo)
        return np.maximum(np.expm1(raw), 0.0)

    @classmethod
    def from_train_mels(cls, raw_mels) -> "NormStats":
        hi = max(float(max(m.max() for m in raw_mels)), 1e-6)
        return cls(lo=0.0, hi=hi)

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "pipeline_version": PIPELINE_VERSION}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(lo=float(d["lo"]), hi=float(d["hi"]))


@dataclass
class ManifestEntry:
    path: str
    tag: str
    split: str
    bpm: float
    source_id: str


@dataclass
class CorpusManifest:
    """Entries plus the train-split normalization stats for one corpus dir."""

    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)
    stats: NormStats = field(default_factory=NormStats)

    def for_split(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def tags(self) -> list[str]:
        return sorted({e.tag for e in self.entries})

    def load_clip(self, entry: ManifestEntry) -> MelClip:
        clip, _ = load_clip(self.root / entry.path)
        return clip

    def load_split(self, split: str) -> list[MelClip]:
        return [self.load_clip(e) for e in self.for_split(split)]

    def digest(self) -> str:
        """Content hash over the manifest, the stats, and every clip blob."""
        h = hashlib.sha256()
        h.update((self.root / "manifest.jsonl").read_bytes())
        h.update((self.root / "stats.json").read_bytes())
        for e in self.entries:
            h.update((self.root / e.path).read_bytes())
        return h.hexdigest()

    def save(self):
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.root / "manifest.jsonl", "w") as f:
            for e in self.entries:
                f.write(json.dumps({
                    "path": e.path, "tag": e.tag, "split": e.split,
                    "bpm": e.bpm, "source_id": e.source_id,
                }, sort_keys=True) + "\n")
        with open(self.root / "stats.json", "w") as f:
            json.dump(self.stats.to_dict(), f, sort_keys=True, indent=2)

    @classmethod
    def load(cls, root) -> "CorpusManifest":
        root = Path(root)
        manifest_path = root / "manifest.jsonl"
        if not manifest_path.exists():
            raise ConfigError(f"no manifest.jsonl under {root}")
        entries = []
        with open(manifest_path) as f:
            for line in f:
                if not line.strip():
                    continue
                d = json.loads(line)
                entry = ManifestEntry(d["path"], d["tag"], d["split"],
                                      float(d["bpm"]), d["source_id"])
                if not (root / entry.path).exists():
                    raise ConfigError(f"manifest references missing clip {entry.path}")
                entries.append(entry)
        with open(root / "stats.json") as f:
            stats = NormStats.from_dict(json.load(f))
        return cls(root=root, entries=entries, stats=stats)


# ---------------------------------------------------------------------------
# wav I/O


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16/24/32-bit PCM wav as mono float64 in [-1, 1]."""
    with wave.open(str(path), "rb") as w:
        n_channels = w.getnchannels()
        width = w.getsampwidth()
        sr = w.getframerate()
        raw = w.readframes(w.getnframes())
    if width == 2:
        x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
        as_int = (b[:, 0].astype(np.int32)
                  | (b[:, 1].astype(np.int32) << 8)
                  | (b[:, 2].astype(np.int32) << 16))
        as_int = np.where(as_int >= 1 << 23, as_int - (1 << 24), as_int)
        x = as_int.astype(np.float64) / float(1 << 23)
    elif width == 4:
        x = np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    else:
        raise InputError(f"unsupported wav sample width {8 * width} bits: {path}")
    if n_channels > 1:
        x = x.reshape(-1, n_channels).mean(axis=1)
    return x, sr


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE):
    """Write mono float samples as 16-bit PCM."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = (x * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def resample_to_rate(samples: np.ndarray, sr: int, target: int = SAMPLE_RATE) -> np.ndarray:
    if sr == target:
        return np.asarray(samples, dtype=np.float64)
    g = np.gcd(int(sr), int(target))
    return resample_poly(samples, target // g, sr // g)


# ---------------------------------------------------------------------------
# pipeline operations


def uniform_grid(loop: AudioLoop, beats_per_bar: int = BEATS_PER_BAR) -> list[float]:
    """Downbeat times assuming constant tempo from the loop's BPM metadata.

    This is the default beat-grid source; any externally computed grid can be
    passed to segment_one_bar instead.
    """
    bar = beats_per_bar * 60.0 / loop.bpm
    n_bars = int(np.floor(loop.duration / bar + 1e-9))
    return [i * bar for i in range(n_bars + 1)]


def segment_one_bar(loop: AudioLoop, beat_grid) -> list[AudioLoop]:
    """Cut a loop into one-bar segments at the supplied downbeat times."""
    grid = [float(t) for t in beat_grid]
    if len(grid) == 0:
        raise NoBeats("beat grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise InputError("beat grid must be sorted ascending")
    if grid[0] < -1e-9 or grid[-1] > loop.duration + 1e-9:
        raise InputError("beat grid extends outside the loop")
    segments = []
    bounds = [int(round(t * loop.sample_rate)) for t in grid]
    for i, (a, b) in enumerate(zip(bounds, bounds[1:])):
        if (b - a) / loop.sample_rate < MIN_SEGMENT_SECONDS:
            raise SegmentTooShort(
                f"bar {i} spans {(b - a) / loop.sample_rate:.3f} s (< {MIN_SEGMENT_SECONDS} s)")
        segments.append(AudioLoop(
            samples=loop.samples[a:b],
            sample_rate=loop.sample_rate,
            bpm=loop.bpm,
            tag=loop.tag,
            source_id=f"{loop.source_id}#{i}" if loop.source_id else f"#{i}",
        ))
    return segments


def time_stretch(segment: AudioLoop, target_bpm: float = TARGET_BPM) -> AudioLoop:
    """Phase-vocoder stretch to the target tempo, preserving pitch.

    Output length is padded/trimmed to round(n_in * bpm / target), so a true
    one-bar 4/4 segment lands on exactly 2.0 s at 120 BPM.
    """
    rate = target_bpm / segment.bpm  # speed factor; > 1 plays faster
    if not (0.5 <= rate <= 2.0):
        warnings.warn(
            f"stretch ratio {rate:.3f} outside [0.5, 2.0] "
            f"({segment.bpm:g} -> {target_bpm:g} BPM)", ExtremeStretch)
    target_len = int(round(len(segment.samples) * segment.bpm / target_bpm))
    if abs(rate - 1.0) < 1e-9:
        out = segment.samples.copy()
    else:
        out = dsp.stretch_waveform(segment.samples, rate, n_fft=N_FFT, hop=HOP)
    if len(out) > target_len:
        out = out[:target_len]
    elif len(out) < target_len:
        out = np.pad(out, (0, target_len - len(out)))
    return AudioLoop(out, segment.sample_rate, target_bpm, segment.tag, segment.source_id)


def fit_to_clip_length(segment: AudioLoop) -> AudioLoop:
    """Pad/trim to exactly 2 s; absorbs the ±1-sample rounding of grid cuts."""
    x = segment.samples
    if len(x) > CLIP_SAMPLES:
        x = x[:CLIP_SAMPLES]
    elif len(x) < CLIP_SAMPLES:
        x = np.pad(x, (0, CLIP_SAMPLES - len(x)))
    return AudioLoop(x, segment.sample_rate, segment.bpm, segment.tag, segment.source_id)


def raw_log_mel(segment: AudioLoop) -> np.ndarray:
    """Unnormalized (64, 200) log1p mel magnitudes of a 2 s segment."""
    if segment.sample_rate != SAMPLE_RATE or len(segment.samples) != CLIP_SAMPLES:
        raise ShapeError(
            f"expected {CLIP_SAMPLES} samples at {SAMPLE_RATE} Hz, got "
            f"{len(segment.samples)} at {segment.sample_rate}")
    spec = np.abs(dsp.stft(segment.samples, n_fft=N_FFT, hop=HOP))
    mel = mel_fb() @ spec
    # centered STFT of 32000 samples gives 201 frames; drop the last for an
    # even two-chunk split
    return np.log1p(mel[:, :N_FRAMES])


def mel_spectrogram(segment: AudioLoop, stats: NormStats | None = None) -> MelClip:
    """Full mel pipeline for one 2 s segment.

    Without explicit stats the clip is normalized against its own maximum,
    which keeps the [-1, 1] contract for standalone use; corpus processing
    passes train-split stats instead.
    """
    raw = raw_log_mel(segment)
    if stats is None:
        stats = NormStats(lo=0.0, hi=max(float(raw.max()), 1e-6))
    return MelClip(stats.normalize(raw).astype(np.float32), tag=segment.tag)


def split_chunks(clip: MelClip) -> tuple[Chunk, Chunk]:
    half = N_FRAMES // 2
    return (Chunk(clip.values[:, :half].copy(), "first"),
            Chunk(clip.values[:, half:].copy(), "second"))


def concat_chunks(first: Chunk, second: Chunk, tag: str = "") -> MelClip:
    if first.index != "first" or second.index != "second":
        raise InputError("concat_chunks expects (first, second) in order")
    return MelClip(np.concatenate([first.values, second.values], axis=1), tag=tag)


# ---------------------------------------------------------------------------
# clip files: flat little-endian float32 blob + JSON sidecar


def clip_to_waveform(clip: MelClip, stats: NormStats, n_iter: int = 60) -> np.ndarray:
    """Audible approximation of a clip: undo the normalization, invert the
    filterbank by least squares, reconstruct phase with Griffin-Lim.

    Lossy by construction (the mel projection discards detail) but good
    enough to audition generated clips.
    """
    mel_mag = stats.denormalize(clip.values)
    linear = dsp.mel_to_linear(mel_mag, mel_fb())
    wave_out = dsp.griffin_lim(linear, n_fft=N_FFT, hop=HOP, n_iter=n_iter,
                               length=CLIP_SAMPLES)
    peak = float(np.max(np.abs(wave_out)))
    if peak > 1.0:
        wave_out = wave_out / peak
    return wave_out.astype(np.float32)


def save_clip(clip: MelClip, blob_path, source_id: str = ""):
    blob_path = Path(blob_path)
    blob_path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(clip.values.astype("<f4").tobytes())
    sidecar = {
        "shape": [N_MELS, N_FRAMES],
        "tag": clip.tag,
        "bpm": clip.bpm,
        "source_id": source_id,
        "pipeline_version": PIPELINE_VERSION,
    }
    blob_path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2))


def load_clip(blob_path) -> tuple[MelClip, dict]:
    blob_path = Path(blob_path)
    sidecar = json.loads(blob_path.with_suffix(".json").read_text())
    shape = tuple(sidecar["shape"])
    values = np.frombuffer(blob_path.read_bytes(), dtype="<f4").reshape(shape)
    return MelClip(values.copy(), tag=sidecar["tag"], bpm=sidecar["bpm"]), sidecar


# ---------------------------------------------------------------------------
# synthetic corpus


def _class_params(c: int) -> dict:
    """Deterministic pattern-family parameters for class index c.

    Roots are spread 5 semitones apart (distinct for c < 36); the remaining
    parameters come from a per-class RNG so families differ along independent
    axes (rhythm pattern, noise band, mix profile). All discrete structure,
    including the 16-step hat pattern, is a class attribute; per-clip
    variation stays continuous (levels, detune, phases) so each family is a
    template a small generator can actually cover.
    """
    rng = np.random.default_rng(np.random.SeedSequence([0xC1A55, c]))
    root_hz = 110.0 * 2.0 ** (((5 * c) % 36) / 12.0)
    quality = [[0, 4, 7], [0, 3, 7], [0, 5, 10], [0, 4, 8]][int(rng.integers(4))]
    kicks_per_bar = int(rng.choice([2, 3, 4, 6, 8]))
    hat_density = float(rng.uniform(0.25, 0.8))
    hat_pattern = rng.random(16) < hat_density
    if not hat_pattern.any():
        hat_pattern[0] = True
    band_lo = float(rng.uniform(1500.0, 5500.0))
    hat_band = (band_lo, band_lo + 1200.0)
    profile = int(rng.integers(4))  # 0 full, 1 drums-heavy, 2 tonal-heavy, 3 noise-heavy
    gains = [(0.5, 0.8, 0.35), (0.15, 1.0, 0.5),
             (0.8, 0.3, 0.1), (0.25, 0.4, 0.9)][profile]
    return {
        "root_hz": root_hz,
        "quality": quality,
        "kicks_per_bar": kicks_per_bar,
        "hat_pattern": hat_pattern,
        "hat_band": hat_band,
        "chord_gain": gains[0],
        "kick_gain": gains[1],
        "hat_gain": gains[2],
    }


def _kick(n: int, sr: int, amp: float) -> np.ndarray:
    dur = min(n, int(0.3 * sr))
    t = np.arange(dur) / sr
    freq = 45.0 + 105.0 * np.exp(-t / 0.04)
    phase = 2.0 * np.pi * np.cumsum(freq) / sr
    body = np.sin(phase) * np.exp(-t / 0.09)
    out = np.zeros(n)
    out[:dur] = amp * body
    return out


def _noise_burst(rng, n: int, sr: int, band: tuple[float, float], amp: float) -> np.ndarray:
    dur = min(n, int(0.06 * sr))
    white = rng.standard_normal(dur)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(dur, 1.0 / sr)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0.0
    shaped = np.fft.irfft(spec, n=dur)
    peak = np.max(np.abs(shaped))
    if peak > 0:
        shaped = shaped / peak
    env = np.exp(-np.arange(dur) / (0.015 * sr))
    out = np.zeros(n)
    out[:dur] = amp * shaped * env
    return out


def _chord(rng, n: int, sr: int, root_hz: float, intervals, amp: float) -> np.ndarray:
    t = np.arange(n) / sr
    detune = 2.0 ** (rng.normal(0.0, 10.0) / 1200.0)  # ~10 cents per clip
    wave_sum = np.zeros(n)
    for iv in intervals:
        f0 = root_hz * 2.0 ** (iv / 12.0) * detune
        for partial in (1, 2, 3):
            a = (1.0 / partial) * float(rng.uniform(0.8, 1.2))
            wave_sum += a * np.sin(2.0 * np.pi * f0 * partial * t + rng.uniform(0, 2 * np.pi))
    env = np.ones(n)
    attack = int(0.015 * sr)
    release = int(0.1 * sr)
    env[:attack] = np.linspace(0.0, 1.0, attack)
    env[-release:] *= np.linspace(1.0, 0.0, release)
    peak = np.max(np.abs(wave_sum))
    return amp * wave_sum * env / max(peak, 1e-9)


def synth_waveform(seed: int, index: int, class_index: int) -> np.ndarray:
    """One deterministic 2 s bar (32000 samples) from pattern family class_index."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    p = _class_params(class_index)
    n = CLIP_SAMPLES
    out = np.zeros(n)

    step = n // p["kicks_per_bar"]
    for k in range(p["kicks_per_bar"]):
        pos = k * step
        out[pos:] += _kick(n - pos, SAMPLE_RATE,
                           p["kick_gain"] * float(rng.uniform(0.85, 1.0)))[: n - pos]

    sixteenth = n // 16
    for s in np.flatnonzero(p["hat_pattern"]):
        pos = int(s) * sixteenth
        out[pos:] += _noise_burst(rng, n - pos, SAMPLE_RATE, p["hat_band"],
                                  p["hat_gain"] * float(rng.uniform(0.6, 1.0)))[: n - pos]

    out += _chord(rng, n, SAMPLE_RATE, p["root_hz"], p["quality"], p["chord_gain"])

    peak = np.max(np.abs(out))
    return out * (0.9 / max(peak, 1e-9))


def assign_splits(class_indices, seed: int, fractions=DEFAULT_SPLIT) -> list[str]:
    """Stratified train/val/test assignment, deterministic given seed."""
    class_indices = np.asarray(class_indices)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x59117]))
    splits = np.empty(len(class_indices), dtype=object)
    for c in np.unique(class_indices):
        idx = np.flatnonzero(class_indices == c)
        rng.shuffle(idx)
        k = len(idx)
        n_val = int(round(fractions[1] * k))
        n_test = int(round(fractions[2] * k))
        n_train = max(1, k - n_val - n_test)
        n_val = min(n_val, k - n_train)
        n_test = k - n_train - n_val
        for j, i in enumerate(idx):
            if j < n_train:
                splits[i] = "train"
            elif j < n_train + n_val:
                splits[i] = "val"
            else:
                splits[i] = "test"
    return list(splits)


def make_synthetic_corpus(seed: int, n_clips: int, n_classes: int, out_dir,
                          fractions=DEFAULT_SPLIT) -> CorpusManifest:
    """Build a deterministic corpus of procedural one-bar loops.

    Waveforms go through the standard pipeline (segment -> stretch -> mel);
    normalization stats come from the train split only.
    """
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    if n_clips < n_classes:
        raise TooFewClips(f"{n_clips} clips cannot cover {n_classes} classes")
    out_dir = Path(out_dir)

    loops = []
    class_indices = []
    for i in range(n_clips):
        c = i % n_classes
        wave_data = synth_waveform(seed, i, c)
        loop = AudioLoop(wave_data, SAMPLE_RATE, TARGET_BPM,
                         tag=f"class{c:02d}", source_id=f"syn-{seed}-{i:05d}")
        bars = segment_one_bar(loop, uniform_grid(loop))
        stretched = time_stretch(bars[0])
        # keep the clip id stable rather than the per-bar suffix
        stretched.source_id = loop.source_id
        loops.append(stretched)
        class_indices.append(c)

    splits = assign_splits(class_indices, seed, fractions)
    raws = [raw_log_mel(lp) for lp in loops]
    train_raws = [r for r, s in zip(raws, splits) if s == "train"]
    stats = NormStats.from_train_mels(train_raws)

    entries = []
    for loop, raw, split in zip(loops, raws, splits):
        clip = MelClip(stats.normalize(raw).astype(np.float32), tag=loop.tag)
        rel = f"clips/{loop.source_id}.f32"
        save_clip(clip, out_dir / rel, source_id=loop.source_id)
        entries.append(ManifestEntry(rel, loop.tag, split, TARGET_BPM, loop.source_id))

    manifest = CorpusManifest(root=out_dir, entries=entries, stats=stats)
    manifest.save()
    return manifest


def ingest_wav_directory(input_dir, out_dir, fractions=DEFAULT_SPLIT) -> CorpusManifest:
    """Build a corpus from a directory of PCM wav loops.

    Each loop.wav needs a loop.json sidecar with at least {"bpm": ...} and an
    optional "tag"; the beat grid is the uniform grid implied by that BPM.
    """
    input_dir = Path(input_dir)
    out_dir = Path(out_dir)
    wavs = sorted(input_dir.glob("*.wav"))
    if not wavs:
        raise ConfigError(f"no .wav files under {input_dir}")

    loops = []
    tags = []
    for path in wavs:
        meta_path = path.with_suffix(".json")
        if not meta_path.exists():
            raise ConfigError(f"{path.name} has no metadata sidecar {meta_path.name}")
        meta = json.loads(meta_path.read_text())
        if "bpm" not in meta:
            raise ConfigError(f"{meta_path.name} lacks a 'bpm' field")
        samples, sr = read_wav(path)
        samples = resample_to_rate(samples, sr)
        loop = AudioLoop(samples, SAMPLE_RATE, float(meta["bpm"]),
                         tag=str(meta.get("tag", "untagged")), source_id=path.stem)
        for bar in segment_one_bar(loop, uniform_grid(loop)):
            stretched = fit_to_clip_length(time_stretch(bar))
            loops.append(stretched)
            tags.append(stretched.tag)

    if not loops:
        raise ConfigError("no one-bar segments produced from input directory")

    tag_to_idx = {t: i for i, t in enumerate(sorted(set(tags)))}
    splits = assign_splits([tag_to_idx[t] for t in tags], seed=0, fractions=fractions)
    raws = [raw_log_mel(lp) for lp in loops]
    train_raws = [r for r, s in zip(raws, splits) if s == "train"] or raws
    stats = NormStats.from_train_mels(train_raws)

    entries = []
    for loop, raw, split in zip(loops, raws, splits):
        clip = MelClip(stats.normalize(raw).astype(np.float32), tag=loop.tag)
        safe_id = loop.source_id.replace("#", "_bar")
        rel = f"clips/{safe_id}.f32"
        save_clip(clip, out_dir / rel, source_id=loop.source_id)
        entries.append(ManifestEntry(rel, loop.tag, split, TARGET_BPM, loop.source_id))

    manifest = CorpusManifest(root=out_dir, entries=entries, stats=stats)
    manifest.save()
    return manifest
