"""Synthetic 4-class vocalization dataset for end-to-end tests.

Classes are acoustically distinct by construction (tone, rising chirp,
high noise band, low harmonic stack); clip lengths 60-400 ms force the
replication path, and source rates alternate 44.1/48 kHz to force
resampling.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from meerkit.audio import AudioClip, DatasetManifest, save_manifest, write_wav

CLASS_NAMES = ("chirp", "harm", "noise", "tone")


def _synth_clip(kind: str, duration_s: float, rate: int, rng: np.random.Generator):
    t = np.arange(int(duration_s * rate)) / rate
    if kind == "tone":
        freq = rng.uniform(450, 650)
        sig = np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    elif kind == "chirp":
        f0, f1 = rng.uniform(250, 400), rng.uniform(2500, 3500)
        phase = 2 * np.pi * (f0 * t + (f1 - f0) * t * t / (2 * duration_s))
        sig = np.sin(phase)
    elif kind == "harm":
        f0 = rng.uniform(140, 220)
        sig = sum(np.sin(2 * np.pi * f0 * (h + 1) * t) / (h + 1) for h in range(5))
        sig = np.asarray(sig)
    elif kind == "noise":
        white = rng.normal(size=t.size + 400)
        # crude band-pass 2-4 kHz via FFT masking
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(white.size, 1 / rate)
        spectrum[(freqs < 2000) | (freqs > 4000)] = 0
        sig = np.fft.irfft(spectrum, white.size)[200:200 + t.size]
    else:
        raise ValueError(kind)
    sig = sig / (np.max(np.abs(sig)) + 1e-9)
    envelope = np.minimum(1.0, np.minimum(t, duration_s - t) / 0.01 + 0.05)
    sig = 0.5 * sig * envelope + 0.01 * rng.normal(size=t.size)
    return np.clip(sig, -0.999, 0.999)


def build_dataset(root: str | Path, clips_per_class: int = 200, seed: int = 123,
                  min_ms: float = 60.0, max_ms: float = 400.0) -> Path:
    """Write WAVs + manifest under `root`; returns the manifest path."""
    root = Path(root)
    audio_dir = root / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for kind in CLASS_NAMES:
        for i in range(clips_per_class):
            rate = 44_100 if (i % 2 == 0) else 48_000
            duration = rng.uniform(min_ms / 1000.0, max_ms / 1000.0)
            sig = _synth_clip(kind, duration, rate, rng)
            call_id = f"{kind}_{i:03d}"
            path = audio_dir / f"{call_id}.wav"
            write_wav(path, AudioClip(sig, rate, call_id), encoding="pcm16")
            entries.append({"call_id": call_id, "path": str(path), "label": kind})
    manifest = DatasetManifest(entries=entries, label_set=sorted(CLASS_NAMES))
    manifest_path = root / "manifest.csv"
    save_manifest(manifest, manifest_path)
    return manifest_path
