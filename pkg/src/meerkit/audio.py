"""Audio loading, resampling, duration enforcement and dataset manifests.

Waveforms are kept as float64 numpy arrays in [-1, 1] at an explicit sample
rate. The WAV reader is deliberately strict: PCM16 and IEEE float32 only, so
that any unexpected encoding fails loudly instead of being silently rescaled.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import upfirdn


class AudioError(Exception):
    """Unreadable or unsupported audio input."""


class ManifestError(Exception):
    """Malformed dataset manifest."""


@dataclass(frozen=True)
class AudioClip:
    """A mono waveform with its sample rate and source identity."""

    samples: np.ndarray
    sample_rate_hz: int
    call_id: str

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size == 0:
            raise AudioError(f"clip {self.call_id!r}: samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise AudioError(f"clip {self.call_id!r}: non-finite samples")
        if self.sample_rate_hz <= 0:
            raise AudioError(f"clip {self.call_id!r}: sample rate must be positive")

    @property
    def duration_ms(self) -> float:
        return 1000.0 * self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class DatasetManifest:
    """Mapping of call ids to audio paths and call-type labels."""

    entries: list[dict] = field(default_factory=list)
    label_set: list[str] = field(default_factory=list)

    def __post_init__(self):
        ids = [e["call_id"] for e in self.entries]
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise ManifestError(f"duplicate call_id: {sorted(dupes)[0]!r}")
        labels = {e["label"] for e in self.entries}
        missing = labels - set(self.label_set)
        if missing:
            raise ManifestError(f"labels missing from label_set: {sorted(missing)}")
        if self.label_set != sorted(self.label_set):
            raise ManifestError("label_set must be sorted lexicographically")

    @property
    def call_ids(self) -> list[str]:
        return [e["call_id"] for e in self.entries]

    @property
    def labels(self) -> list[str]:
        return [e["label"] for e in self.entries]

    def class_counts(self) -> dict[str, int]:
        counts = {label: 0 for label in self.label_set}
        for e in self.entries:
            counts[e["label"]] += 1
        return counts


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def load_wav(path: str | Path, call_id: str | None = None) -> AudioClip:
    """Read a RIFF/WAVE file into a normalized mono clip.

    PCM16 samples are scaled by 1/32768; float32 samples pass through and are
    clamped to [-1, 1]. Multi-channel audio is averaged across channels.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such audio file: {path}")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise AudioError(f"{path}: not a RIFF/WAVE container")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        # chunks are word-aligned: odd sizes carry a pad byte
        pos += 8 + chunk_size + (chunk_size & 1)

    if fmt is None or len(fmt) < 16:
        raise AudioError(f"{path}: missing or truncated fmt chunk")
    if data is None:
        raise AudioError(f"{path}: missing data chunk")
    if len(data) == 0:
        raise AudioError(f"{path}: zero-length data chunk")

    format_tag, n_channels, sample_rate, _, block_align, bits = struct.unpack_from(
        "<HHIIHH", fmt, 0
    )
    if format_tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise AudioError(f"{path}: truncated extensible fmt chunk")
        (format_tag,) = struct.unpack_from("<H", fmt, 24)
    if n_channels < 1 or sample_rate < 1 or block_align < 1:
        raise AudioError(f"{path}: malformed fmt chunk")

    if format_tag == _WAVE_FORMAT_PCM and bits == 16:
        frames = np.frombuffer(data[: len(data) - len(data) % block_align], dtype="<i2")
        samples = frames.astype(np.float64) / 32768.0
    elif format_tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        frames = np.frombuffer(data[: len(data) - len(data) % block_align], dtype="<f4")
        samples = np.clip(frames.astype(np.float64), -1.0, 1.0)
    else:
        raise AudioError(
            f"{path}: unsupported encoding (format tag {format_tag}, {bits}-bit); "
            "only PCM16 and IEEE float32 are accepted"
        )

    if samples.size == 0:
        raise AudioError(f"{path}: zero-length data chunk")
    if n_channels > 1:
        samples = samples[: samples.size - samples.size % n_channels]
        samples = samples.reshape(-1, n_channels).mean(axis=1)

    return AudioClip(samples, int(sample_rate), call_id or path.stem)


def write_wav(path: str | Path, clip: AudioClip, encoding: str = "float32") -> None:
    """Write a mono clip as PCM16 or IEEE float32 WAV."""
    if encoding == "pcm16":
        format_tag, bits = _WAVE_FORMAT_PCM, 16
        payload = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2").tobytes()
    elif encoding == "float32":
        format_tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
        payload = clip.samples.astype("<f4").tobytes()
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block_align = bits // 8
    byte_rate = clip.sample_rate_hz * block_align
    fmt = struct.pack("<HHIIHH", format_tag, 1, clip.sample_rate_hz, byte_rate, block_align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

# Kaiser beta for ~60 dB stopband attenuation: 0.1102 * (60 - 8.7)
_KAISER_BETA = 5.65326
_HALF_LEN_FACTOR = 16


def _design_polyphase_filter(up: int, down: int) -> np.ndarray:
    """Windowed-sinc low-pass for rational resampling, at the upsampled rate.

    Cutoff sits at 0.95 of the narrower Nyquist; DC gain is normalized to
    `up` so that the polyphase chain preserves signal amplitude.
    """
    half_len = _HALF_LEN_FACTOR * max(up, down)
    numtaps = 2 * half_len + 1
    cutoff = 0.95 / max(up, down)  # fraction of the upsampled Nyquist
    n = np.arange(numtaps) - half_len
    taps = cutoff * np.sinc(cutoff * n) * np.kaiser(numtaps, _KAISER_BETA)
    return taps * (up / taps.sum())


def resample(clip: AudioClip, target_rate_hz: int) -> AudioClip:
    """Band-limited rate conversion by polyphase windowed-sinc filtering.

    Output length is round(n_in * target / source). Same-rate input is
    returned unchanged.
    """
    if target_rate_hz <= 0:
        raise ValueError("target_rate_hz must be positive")
    source = clip.sample_rate_hz
    if target_rate_hz == source:
        return clip
    g = math.gcd(source, target_rate_hz)
    up, down = target_rate_hz // g, source // g
    n_in = clip.samples.size
    n_out = (2 * n_in * up + down) // (2 * down)  # round half up, exact integers

    taps = _design_polyphase_filter(up, down)
    half_len = (taps.size - 1) // 2
    # zero-pad the filter so the kept samples align with the filter center
    n_pre_pad = (down - half_len % down) % down
    n_pre_remove = (half_len + n_pre_pad) // down
    n_post_pad = 0
    while _upfirdn_len(taps.size + n_pre_pad + n_post_pad, n_in, up, down) < n_out + n_pre_remove:
        n_post_pad += down
    padded = np.concatenate([np.zeros(n_pre_pad), taps, np.zeros(n_post_pad)])
    out = upfirdn(padded, clip.samples, up=up, down=down)[n_pre_remove:n_pre_remove + n_out]
    return AudioClip(out, target_rate_hz, clip.call_id)


def _upfirdn_len(len_h: int, in_len: int, up: int, down: int) -> int:
    return (((in_len - 1) * up + len_h) - 1) // down + 1


# ---------------------------------------------------------------------------
# Duration enforcement
# ---------------------------------------------------------------------------

def enforce_min_duration(clip: AudioClip, min_ms: float = 100.0) -> AudioClip:
    """Tile whole copies of the waveform until it reaches `min_ms`.

    The final copy is never truncated, so short calls come out as an exact
    periodic repetition of themselves.
    """
    if min_ms <= 0:
        raise ValueError("min_ms must be positive")
    min_samples = math.ceil(min_ms * clip.sample_rate_hz / 1000.0)
    n = clip.samples.size
    if n >= min_samples:
        return clip
    reps = -(-min_samples // n)  # ceil division
    return AudioClip(np.tile(clip.samples, reps), clip.sample_rate_hz, clip.call_id)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

_MANIFEST_COLUMNS = ["call_id", "path", "label"]


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse a `call_id,path,label` CSV into a manifest.

    The label set is the sorted list of distinct labels, fixing the canonical
    class ordering used everywhere downstream.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc

    reader = csv.reader(text.splitlines())
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestError(f"{path}: empty manifest") from None
    if header != _MANIFEST_COLUMNS:
        raise ManifestError(
            f"{path}: bad header {header!r}, expected {_MANIFEST_COLUMNS!r}"
        )

    entries = []
    seen: set[str] = set()
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ManifestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        call_id, audio_path, label = (f.strip() for f in row)
        if not call_id:
            raise ManifestError(f"{path}:{lineno}: empty call_id")
        if not label:
            raise ManifestError(f"{path}:{lineno}: empty label")
        if call_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate call_id {call_id!r}")
        seen.add(call_id)
        entries.append({"call_id": call_id, "path": audio_path, "label": label})

    label_set = sorted({e["label"] for e in entries})
    return DatasetManifest(entries=entries, label_set=label_set)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = [",".join(_MANIFEST_COLUMNS)]
    for e in manifest.entries:
        lines.append(f"{e['call_id']},{e['path']},{e['label']}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
