"""Raw-waveform 1-D CNN for call-type classification and feature extraction.

Three conv/maxpool/ReLU blocks feed an adaptive average over time, an
80-unit hidden layer (whose post-ReLU output is the extracted feature
vector) and a linear class head. Everything runs in float64 numpy with
explicit forward/backward passes: training is bit-reproducible for a fixed
seed, and gradients are checkable against finite differences.

Variable-length batches are right-padded; each layer tracks per-clip valid
frame counts and the adaptive pool averages only valid frames, so a padded
batch computes exactly the same outputs as one clip at a time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio import AudioClip
from .features import FeatureTable

FORMAT_VERSION = 1

# conv blocks: (kernel, stride, out_channels), each followed by maxpool 2/2 + ReLU
BLOCKS = ((40, 30, 40), (7, 1, 40), (3, 1, 80))
HIDDEN_UNITS = 80
MIN_INPUT_SAMPLES = 730  # shortest input that still yields one block-3 conv frame

PARAM_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3", "wh", "bh", "wo", "bo")


class CnnError(Exception):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 1 or self.batch_size < 1:
            raise CnnError("learning_rate must be >= 0, epochs and batch_size >= 1")
        if self.patience < 0:
            raise CnnError("patience must be >= 0")


@dataclass
class CnnModel:
    n_classes: int
    params: dict[str, np.ndarray]
    seed: int = 0
    train_config: dict = field(default_factory=dict)

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


def init_model(n_classes: int, seed: int) -> CnnModel:
    """Uniform fan-in initialization, reproducible from the seed."""
    if n_classes < 2:
        raise CnnError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    in_ch = 1
    for block_idx, (kernel, _, out_ch) in enumerate(BLOCKS, start=1):
        bound = 1.0 / np.sqrt(in_ch * kernel)
        params[f"w{block_idx}"] = rng.uniform(-bound, bound, size=(out_ch, in_ch, kernel))
        params[f"b{block_idx}"] = rng.uniform(-bound, bound, size=out_ch)
        in_ch = out_ch
    bound = 1.0 / np.sqrt(in_ch)
    params["wh"] = rng.uniform(-bound, bound, size=(HIDDEN_UNITS, in_ch))
    params["bh"] = rng.uniform(-bound, bound, size=HIDDEN_UNITS)
    bound = 1.0 / np.sqrt(HIDDEN_UNITS)
    params["wo"] = rng.uniform(-bound, bound, size=(n_classes, HIDDEN_UNITS))
    params["bo"] = rng.uniform(-bound, bound, size=n_classes)
    return CnnModel(n_classes=n_classes, params=params, seed=seed)


def block_frame_counts(length: int) -> list[int]:
    """Frame counts after each conv and pool for a single input length."""
    counts = []
    n = length
    for kernel, stride, _ in BLOCKS:
        n = (n - kernel) // stride + 1
        counts.append(n)
        n = max(1, n // 2)  # a lone frame survives pooling
        counts.append(n)
    return counts


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _conv_forward(x, w, b, stride):
    # im2col: (B, C, F, k) -> (B*F, C*k) @ (C*k, O)
    n_batch, n_ch, _ = x.shape
    k = w.shape[2]
    windows = sliding_window_view(x, k, axis=2)[:, :, ::stride, :]
    n_frames = windows.shape[2]
    col = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(
        n_batch * n_frames, n_ch * k
    )
    out2d = col @ w.reshape(w.shape[0], -1).T
    out = out2d.reshape(n_batch, n_frames, w.shape[0]).transpose(0, 2, 1) + b[None, :, None]
    return out, col


def _conv_backward(d_out, col, w, x_shape, stride):
    n_batch, n_out, n_frames = d_out.shape
    k = w.shape[2]
    d_out2d = np.ascontiguousarray(d_out.transpose(0, 2, 1)).reshape(
        n_batch * n_frames, n_out
    )
    d_w = (d_out2d.T @ col).reshape(w.shape)
    d_b = d_out.sum(axis=(0, 2))
    d_win = (d_out2d @ w.reshape(n_out, -1)).reshape(
        n_batch, n_frames, x_shape[1], k
    ).transpose(0, 2, 1, 3)
    d_x = np.zeros(x_shape)
    for t in range(k):
        d_x[:, :, t:t + stride * n_frames:stride] += d_win[:, :, :, t]
    return d_x, d_w, d_b


def _mask_frames(x, valid, fill):
    invalid = np.arange(x.shape[2])[None, None, :] >= valid[:, None, None]
    return np.where(invalid, fill, x)


def _pool_forward(x, valid):
    n_frames = x.shape[2]
    new_valid = np.maximum(1, valid // 2)
    if n_frames < 2:
        return x.copy(), None, new_valid
    masked = _mask_frames(x, valid, -np.inf)
    pairs = masked[:, :, : 2 * (n_frames // 2)].reshape(x.shape[0], x.shape[1], -1, 2)
    arg = pairs.argmax(axis=3)
    out = np.take_along_axis(pairs, arg[..., None], axis=3)[..., 0]
    return out, arg, new_valid


def _pool_backward(d_out, arg, x_shape):
    if arg is None:
        return d_out.copy()
    b, c, half = d_out.shape
    d_x = np.zeros(x_shape)
    flat_pos = 2 * np.arange(half)[None, None, :] + arg
    batch_idx = np.arange(b)[:, None, None]
    chan_idx = np.arange(c)[None, :, None]
    d_x[batch_idx, chan_idx, flat_pos] = d_out
    return d_x


def forward_batch(model: CnnModel, waves: np.ndarray, lengths: np.ndarray, *,
                  want_cache: bool = False):
    """Run the network on a right-padded batch.

    Returns (logits, hidden, cache). `lengths` holds true sample counts;
    frames derived from padding never reach the pooled average.
    """
    if np.any(lengths < MIN_INPUT_SAMPLES):
        raise CnnError(f"waveform shorter than {MIN_INPUT_SAMPLES} samples")
    if not np.all(np.isfinite(waves)):
        raise CnnError("non-finite waveform input")
    p = model.params
    x = waves[:, None, :]
    valid = lengths.astype(np.int64)
    cache = {"inputs": [], "windows": [], "pool_args": [], "relu_masks": [],
             "shapes": [], "valid": []}

    for block_idx, (kernel, stride, _) in enumerate(BLOCKS, start=1):
        w, bias = p[f"w{block_idx}"], p[f"b{block_idx}"]
        conv, windows = _conv_forward(x, w, bias, stride)
        conv_valid = (valid - kernel) // stride + 1
        pooled, arg, valid = _pool_forward(conv, conv_valid)
        relu_mask = pooled > 0
        out = np.where(relu_mask, pooled, 0.0)  # also zeroes -inf padding frames
        if want_cache:
            cache["shapes"].append((x.shape, conv.shape))
            cache["windows"].append(windows)
            cache["pool_args"].append(arg)
            cache["relu_masks"].append(relu_mask)
            cache.setdefault("conv_raw", []).append(conv)
            cache.setdefault("pooled_raw", []).append(pooled)
            cache.setdefault("conv_valid", []).append(conv_valid.copy())
            cache.setdefault("valid_per_block", []).append(valid.copy())
        x = out

    cache["final_valid"] = valid
    frame_mask = np.arange(x.shape[2])[None, :] < valid[:, None]
    pooled_vec = (x * frame_mask[:, None, :]).sum(axis=2) / valid[:, None]

    pre_hidden = pooled_vec @ p["wh"].T + p["bh"]
    hidden_mask = pre_hidden > 0
    hidden = pre_hidden * hidden_mask
    logits = hidden @ p["wo"].T + p["bo"]

    if want_cache:
        cache.update(last_block=x, frame_mask=frame_mask, pooled_vec=pooled_vec,
                     hidden_mask=hidden_mask, hidden=hidden, pre_hidden=pre_hidden)
        return logits, hidden, cache
    return logits, hidden, None


def forward(model: CnnModel, waveform) -> dict[str, np.ndarray]:
    """Single-clip forward pass: class logits and the 80-dim hidden feature."""
    wave = np.asarray(waveform, dtype=np.float64)
    logits, hidden, _ = forward_batch(model, wave[None, :], np.array([wave.size]))
    return {"logits": logits[0], "hidden": hidden[0]}


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return -float(log_probs[np.arange(logits.shape[0]), targets].mean())


def loss_only(model: CnnModel, waves, lengths, targets) -> float:
    logits, _, _ = forward_batch(model, waves, lengths)
    return cross_entropy(logits, np.asarray(targets))


def loss_and_gradients(model: CnnModel, waves, lengths, targets):
    """Mean softmax cross-entropy and gradients for every parameter."""
    p = model.params
    logits, hidden, cache = forward_batch(model, waves, lengths, want_cache=True)
    batch = logits.shape[0]

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -float(log_probs[np.arange(batch), targets].mean())

    d_logits = np.exp(log_probs)
    d_logits[np.arange(batch), targets] -= 1.0
    d_logits /= batch

    grads: dict[str, np.ndarray] = {}
    grads["wo"] = d_logits.T @ hidden
    grads["bo"] = d_logits.sum(axis=0)
    d_hidden = (d_logits @ p["wo"]) * cache["hidden_mask"]
    grads["wh"] = d_hidden.T @ cache["pooled_vec"]
    grads["bh"] = d_hidden.sum(axis=0)
    d_pooled_vec = d_hidden @ p["wh"]

    valid = cache["final_valid"]
    x = cache["last_block"]
    d_x = (
        d_pooled_vec[:, :, None]
        * cache["frame_mask"][:, None, :]
        / valid[:, None, None]
    )

    for block_idx in range(len(BLOCKS), 0, -1):
        kernel, stride, _ = BLOCKS[block_idx - 1]
        idx = block_idx - 1
        d_pooled = d_x * cache["relu_masks"][idx]
        x_shape, conv_shape = cache["shapes"][idx]
        d_conv = _pool_backward(d_pooled, cache["pool_args"][idx], conv_shape)
        d_x, d_w, d_b = _conv_backward(
            d_conv, cache["windows"][idx], p[f"w{block_idx}"], x_shape, stride
        )
        grads[f"w{block_idx}"] = d_w
        grads[f"b{block_idx}"] = d_b

    return loss, grads, logits


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _bucket_batches(order: np.ndarray, lengths: np.ndarray, batch_size: int,
                    rng: np.random.Generator) -> list[np.ndarray]:
    """Group indices into length-sorted batches, then shuffle batch order."""
    by_length = order[np.argsort(lengths[order], kind="stable")]
    batches = [by_length[i:i + batch_size] for i in range(0, by_length.size, batch_size)]
    rng.shuffle(batches)
    return batches


def _pad_batch(clips: list[np.ndarray], indices: np.ndarray):
    lengths = np.array([clips[i].size for i in indices], dtype=np.int64)
    waves = np.zeros((indices.size, int(lengths.max())))
    for row, i in enumerate(indices):
        waves[row, : clips[i].size] = clips[i]
    return waves, lengths


def train(clips: list[AudioClip], class_indices, n_classes: int,
          config: TrainConfig) -> tuple[CnnModel, list[dict]]:
    """Train with Adam; early stopping watches UAR on a held-out stratified
    slice of the training data and restores the best weights."""
    from .metrics import confusion_from_predictions, uar

    targets = np.asarray(class_indices, dtype=np.int64)
    if len(clips) != targets.size:
        raise CnnError("one class index per clip required")
    counts = np.bincount(targets, minlength=n_classes)
    if (counts == 0).any():
        raise CnnError(f"empty class index {int(np.argmin(counts))}")

    waves_all = [np.asarray(c.samples, dtype=np.float64) for c in clips]
    rng = np.random.default_rng(config.seed)
    model = init_model(n_classes, config.seed)
    model.train_config = asdict(config)

    # stratified validation slice for early stopping
    val_idx: list[int] = []
    if config.patience > 0 and config.val_fraction > 0:
        for cls in range(n_classes):
            members = np.flatnonzero(targets == cls)
            if members.size < 2:
                continue
            n_val = max(1, int(round(config.val_fraction * members.size)))
            n_val = min(n_val, members.size - 1)
            picked = rng.permutation(members)[:n_val]
            val_idx.extend(int(i) for i in picked)
    val_idx_arr = np.array(sorted(val_idx), dtype=np.int64)
    train_idx = np.setdiff1d(np.arange(targets.size), val_idx_arr)

    adam_m = {k: np.zeros_like(v) for k, v in model.params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in model.params.items()}
    step = 0
    best_val = -1.0
    best_params = model.copy_params()
    stale = 0
    history: list[dict] = []

    for epoch in range(config.epochs):
        batches = _bucket_batches(rng.permutation(train_idx),
                                  np.array([w.size for w in waves_all]),
                                  config.batch_size, rng)
        epoch_loss = 0.0
        for batch_indices in batches:
            waves, lengths = _pad_batch(waves_all, batch_indices)
            loss, grads, _ = loss_and_gradients(model, waves, lengths,
                                                targets[batch_indices])
            if not np.isfinite(loss):
                raise CnnError(f"training diverged (non-finite loss) at epoch {epoch}")
            epoch_loss += loss * batch_indices.size
            step += 1
            for key in PARAM_ORDER:
                g = grads[key]
                adam_m[key] = config.beta1 * adam_m[key] + (1 - config.beta1) * g
                adam_v[key] = config.beta2 * adam_v[key] + (1 - config.beta2) * g * g
                m_hat = adam_m[key] / (1 - config.beta1 ** step)
                v_hat = adam_v[key] / (1 - config.beta2 ** step)
                model.params[key] -= (
                    config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
                )

        entry = {"epoch": epoch, "train_loss": epoch_loss / max(1, train_idx.size)}
        if val_idx_arr.size:
            preds = classify(model, [waves_all[i] for i in val_idx_arr])
            entry["val_uar"] = uar(confusion_from_predictions(
                targets[val_idx_arr], preds, [str(c) for c in range(n_classes)]))
            history.append(entry)
            if entry["val_uar"] > best_val:
                best_val = entry["val_uar"]
                best_params = model.copy_params()
                stale = 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    break
        else:
            history.append(entry)

    if val_idx_arr.size:
        model.params = best_params
    return model, history


def classify(model: CnnModel, waveforms) -> np.ndarray:
    """Argmax class prediction for a list of raw waveforms."""
    waves_all = [np.asarray(w, dtype=np.float64) for w in waveforms]
    out = np.empty(len(waves_all), dtype=np.int64)
    order = np.argsort([w.size for w in waves_all], kind="stable")
    for start in range(0, order.size, 64):
        chunk = order[start:start + 64]
        waves, lengths = _pad_batch(waves_all, chunk)
        logits, _, _ = forward_batch(model, waves, lengths)
        out[chunk] = logits.argmax(axis=1)
    return out


def extract_features(model: CnnModel, clips: list[AudioClip],
                     feature_set_id: str = "cnn-crafted") -> FeatureTable:
    """Hidden-layer activations for every clip as a feature table.

    Clips run one at a time so each row is exactly forward(model, clip).hidden.
    """
    rows: dict[str, np.ndarray] = {}
    for clip in clips:
        rows[clip.call_id] = forward(model, clip.samples)["hidden"]
    names = [f"cnn_{i:02d}" for i in range(HIDDEN_UNITS)]
    return FeatureTable(feature_set_id, names, rows)


def select_feature_extractor(fold_models: list[dict]) -> CnnModel:
    """The model of the best-scoring fold; earlier folds win ties."""
    if not fold_models:
        raise CnnError("no fold models to select from")
    best = 0
    for i, entry in enumerate(fold_models):
        if entry["fold_uar"] > fold_models[best]["fold_uar"]:
            best = i
    return fold_models[best]["model"]


# ---------------------------------------------------------------------------
# filter analysis
# ---------------------------------------------------------------------------

FILTER_DFT_POINTS = 1024
SAMPLE_RATE_FOR_ANALYSIS = 16_000
LOG_FLOOR = 1e-12


def filter_frequency_response(model: CnnModel) -> dict[str, np.ndarray]:
    """Log of the summed magnitude spectra of the first-layer filters."""
    w1 = model.params["w1"]
    if w1.shape[1] != 1 or w1.shape[2] != BLOCKS[0][0]:
        raise CnnError("first conv block has unexpected filter shape")
    spectra = np.abs(np.fft.rfft(w1[:, 0, :], FILTER_DFT_POINTS, axis=1))
    summed = spectra.sum(axis=0)
    n_bins = FILTER_DFT_POINTS // 2 + 1
    freqs = np.arange(n_bins) * SAMPLE_RATE_FOR_ANALYSIS / FILTER_DFT_POINTS
    return {
        "freqs_hz": freqs,
        "log_cumulative_magnitude": np.log(np.maximum(summed, LOG_FLOOR)),
    }


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_model(model: CnnModel, path: str | Path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "architecture": {"blocks": [list(b) for b in BLOCKS],
                         "hidden_units": HIDDEN_UNITS},
        "n_classes": model.n_classes,
        "seed": model.seed,
        "train_config": model.train_config,
        "params": {k: model.params[k].ravel().tolist() for k in PARAM_ORDER},
        "shapes": {k: list(model.params[k].shape) for k in PARAM_ORDER},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path: str | Path) -> CnnModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != FORMAT_VERSION:
        raise CnnError(f"unsupported model format version {doc.get('format_version')}")
    arch = doc.get("architecture", {})
    if arch.get("blocks") != [list(b) for b in BLOCKS] or arch.get("hidden_units") != HIDDEN_UNITS:
        raise CnnError("model file architecture constants do not match this build")
    params = {}
    for key in PARAM_ORDER:
        params[key] = np.array(doc["params"][key]).reshape(doc["shapes"][key])
    return CnnModel(
        n_classes=int(doc["n_classes"]),
        params=params,
        seed=int(doc.get("seed", 0)),
        train_config=doc.get("train_config", {}),
    )
