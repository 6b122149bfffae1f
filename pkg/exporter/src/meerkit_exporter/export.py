"""Call-level embedding export from self-supervised speech models.

Consumes the classifier toolkit's manifest CSV and preprocessed 16 kHz WAVs,
and emits its feature CSV format (`call_id,<name_1>,...`), one 768-dim row
per call. Layer selection follows the base-model layout: `cnn-encoder` is
the convolutional front-end output (after projection, before transformer
block 1); `transformer-N` is 1-based over the 12 encoder blocks;
`transformer-average` averages the 12 block outputs per frame before the
over-frames mean.
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

MODEL_NAMES = ("wav2vec2", "wavlm", "hubert")
SELECTIONS = ("cnn-encoder", "transformer-1", "transformer-2", "transformer-6",
              "transformer-last", "transformer-average")
EXPECTED_RATE = 16_000
EMBED_DIM = 768
N_TRANSFORMER_LAYERS = 12

DEFAULT_CHECKPOINTS = {
    "wav2vec2": "facebook/wav2vec2-base",
    "wavlm": "microsoft/wavlm-base",
    "hubert": "facebook/hubert-base-ls960",
}


class ExportError(Exception):
    pass


@dataclass(frozen=True)
class LayerSelector:
    model_name: str
    selection: str

    def __post_init__(self):
        if self.model_name not in MODEL_NAMES:
            raise ExportError(f"unknown model {self.model_name!r}; one of {MODEL_NAMES}")
        if self.selection not in SELECTIONS:
            raise ExportError(f"unknown selection {self.selection!r}; one of {SELECTIONS}")


# ---------------------------------------------------------------------------
# input formats (the toolkit's external interfaces)
# ---------------------------------------------------------------------------

def read_manifest(path: str | Path) -> list[dict]:
    rows = list(csv.reader(Path(path).read_text(encoding="utf-8").splitlines()))
    if not rows or rows[0] != ["call_id", "path", "label"]:
        raise ExportError(f"{path}: not a manifest CSV (expected call_id,path,label)")
    entries = []
    seen = set()
    for row in rows[1:]:
        if not row:
            continue
        call_id, audio_path, label = row
        if call_id in seen:
            raise ExportError(f"{path}: duplicate call_id {call_id!r}")
        seen.add(call_id)
        entries.append({"call_id": call_id, "path": audio_path, "label": label})
    return entries


def read_wav_mono_16k(path: Path) -> np.ndarray:
    """Minimal PCM16/float32 RIFF reader; rejects anything not at 16 kHz."""
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise ExportError(f"{path}: not a RIFF/WAVE file")
    fmt = data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        if cid == b"fmt ":
            fmt = raw[pos + 8:pos + 8 + size]
        elif cid == b"data":
            data = raw[pos + 8:pos + 8 + size]
        pos += 8 + size + (size & 1)
    if fmt is None or data is None or len(data) == 0:
        raise ExportError(f"{path}: missing fmt/data chunk")
    tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if rate != EXPECTED_RATE:
        raise ExportError(f"{path}: expected {EXPECTED_RATE} Hz input, got {rate}")
    if tag == 1 and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float32) / 32768.0
    elif tag == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float32)
    else:
        raise ExportError(f"{path}: unsupported encoding (tag {tag}, {bits}-bit)")
    if channels > 1:
        samples = samples[: samples.size - samples.size % channels]
        samples = samples.reshape(-1, channels).mean(axis=1)
    return samples


def resolve_audio_path(entry_path: str, audio_dir: str | Path | None) -> Path:
    p = Path(entry_path)
    if p.is_file():
        return p
    if audio_dir is not None:
        candidate = Path(audio_dir) / entry_path
        if candidate.is_file():
            return candidate
        candidate = Path(audio_dir) / p.name
        if candidate.is_file():
            return candidate
    raise ExportError(f"audio file not found: {entry_path}")


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

def load_model(model_name: str, checkpoint: str | Path | None = None):
    """Load the base-size encoder in eval mode from a local path or hub name."""
    from transformers import HubertModel, Wav2Vec2Model, WavLMModel

    classes = {"wav2vec2": Wav2Vec2Model, "wavlm": WavLMModel, "hubert": HubertModel}
    source = str(checkpoint or DEFAULT_CHECKPOINTS[model_name])
    try:
        model = classes[model_name].from_pretrained(source)
    except Exception as exc:  # unavailable checkpoint, offline hub, bad path
        raise ExportError(f"model {model_name!r} unavailable from {source!r}: {exc}") from exc
    model.eval()
    return model


MIN_SAMPLES = 640  # one encoder frame (400-sample receptive field, stride 320)


def clip_embeddings(model, wave: np.ndarray) -> dict[str, np.ndarray]:
    """All six call-level selections from one forward pass."""
    if wave.size < MIN_SAMPLES:
        raise ExportError(f"clip too short for one model frame ({wave.size} samples)")
    with torch.no_grad():
        out = model(torch.from_numpy(wave).float()[None, :], output_hidden_states=True)
    hidden = [h[0].numpy() for h in out.hidden_states]  # (frames, 768) each
    if len(hidden) != N_TRANSFORMER_LAYERS + 1:
        raise ExportError(
            f"expected a {N_TRANSFORMER_LAYERS}-layer base model, got "
            f"{len(hidden) - 1} transformer layers")
    per_frame_layer_mean = np.mean(np.stack(hidden[1:]), axis=0)
    return {
        "cnn-encoder": hidden[0].mean(axis=0),
        "transformer-1": hidden[1].mean(axis=0),
        "transformer-2": hidden[2].mean(axis=0),
        "transformer-6": hidden[6].mean(axis=0),
        "transformer-last": hidden[N_TRANSFORMER_LAYERS].mean(axis=0),
        "transformer-average": per_frame_layer_mean.mean(axis=0),
    }


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def _write_feature_csv(path: Path, rows: list[tuple[str, np.ndarray]]) -> None:
    """Atomic write of the toolkit feature CSV (temp file + rename)."""
    names = [f"emb_{i:03d}" for i in range(EMBED_DIM)]
    lines = ["call_id," + ",".join(names)]
    for call_id, vec in rows:
        if vec.shape != (EMBED_DIM,):
            raise ExportError(f"{call_id}: embedding dimension {vec.shape} != {EMBED_DIM}")
        lines.append(call_id + "," + ",".join(repr(float(v)) for v in vec))
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def export_embeddings(manifest_path, audio_dir, selector: LayerSelector, out_csv,
                      checkpoint=None, model=None) -> Path:
    """One feature CSV for one layer selection."""
    entries = read_manifest(manifest_path)
    model = model if model is not None else load_model(selector.model_name, checkpoint)
    rows = []
    for entry in entries:
        wav = resolve_audio_path(entry["path"], audio_dir)
        wave = read_wav_mono_16k(wav)
        rows.append((entry["call_id"], clip_embeddings(model, wave)[selector.selection]))
    out = Path(out_csv)
    _write_feature_csv(out, rows)
    return out


def export_all_selectors(manifest_path, audio_dir, model_name: str, out_dir,
                         checkpoint=None) -> list[Path]:
    """Six CSVs (one per selection), computed from a single forward pass per
    clip; files named `<model>-<selection>.csv`."""
    entries = read_manifest(manifest_path)
    model = load_model(model_name, checkpoint)
    per_selection: dict[str, list[tuple[str, np.ndarray]]] = {s: [] for s in SELECTIONS}
    for entry in entries:
        wav = resolve_audio_path(entry["path"], audio_dir)
        embeddings = clip_embeddings(model, read_wav_mono_16k(wav))
        for selection in SELECTIONS:
            per_selection[selection].append((entry["call_id"], embeddings[selection]))
    out_dir = Path(out_dir)
    written = []
    for selection in SELECTIONS:
        path = out_dir / f"{model_name}-{selection}.csv"
        _write_feature_csv(path, per_selection[selection])
        written.append(path)
    return written
