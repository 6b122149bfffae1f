"""Helpers for exhaustive finite-difference gradient verification.

Central differences at step h only measure the true derivative if the loss
is smooth on [theta-h, theta+h]; a ReLU kink or a max-pool tie inside that
interval invalidates the comparison for that coordinate. `hardened_model`
builds a network whose operating point keeps every activation clear of its
kink and every pool pair clearly decided, so the sweep checks the analytic
gradient rather than kink geometry. Hardening works block by block (redraw
channels whose pool pairs nearly tie, then shift biases away from ReLU
zeros); each stage only disturbs deeper layers, so one forward pass per
round suffices.
"""

from __future__ import annotations

import numpy as np

from meerkit.cnn import BLOCKS, PARAM_ORDER, forward_batch, init_model, loss_only

KINK_MARGIN = 2e-3
TIE_MARGIN = 1e-3


def _block_cache(model, waves, lengths):
    _, _, cache = forward_batch(model, waves, lengths, want_cache=True)
    return cache


def _tie_bad_channels(cache, block_idx, margin):
    conv = cache["conv_raw"][block_idx - 1]
    conv_valid = cache["conv_valid"][block_idx - 1]
    bad = set()
    for b in range(conv.shape[0]):
        v = int(conv_valid[b])
        if v < 2:
            continue
        pairs = conv[b, :, : 2 * (v // 2)].reshape(conv.shape[1], -1, 2)
        gaps = np.abs(pairs[:, :, 0] - pairs[:, :, 1])
        bad.update(np.flatnonzero((gaps < margin).any(axis=1)).tolist())
    return sorted(bad)


def _kink_bad_channels(cache, block_idx, margin):
    pooled = cache["pooled_raw"][block_idx - 1]
    valid = cache["valid_per_block"][block_idx - 1]
    frame_ok = np.arange(pooled.shape[2])[None, :] < valid[:, None]
    close = (np.abs(pooled) < margin) & frame_ok[:, None, :]
    return np.unique(np.nonzero(close)[1]).tolist()


def hardened_model(n_classes, waves, lengths, seed,
                   kink_margin=KINK_MARGIN, tie_margin=TIE_MARGIN):
    """A seeded model adjusted so finite differences at h=1e-4 are valid."""
    model = init_model(n_classes, seed)
    redraw = np.random.default_rng(seed + 7777)

    in_ch = 1
    for bi, (kernel, _, out_ch) in enumerate(BLOCKS, start=1):
        bound = 1.0 / np.sqrt(in_ch * kernel)
        for _ in range(300):
            bad = _tie_bad_channels(_block_cache(model, waves, lengths), bi, tie_margin)
            if not bad:
                break
            for ch in bad:
                model.params[f"w{bi}"][ch] = redraw.uniform(-bound, bound, (in_ch, kernel))
                model.params[f"b{bi}"][ch] = redraw.uniform(-bound, bound)
        else:
            raise RuntimeError(f"could not harden pool ties in block {bi}")
        for _ in range(300):
            bad = _kink_bad_channels(_block_cache(model, waves, lengths), bi, kink_margin)
            if not bad:
                break
            for ch in bad:
                model.params[f"b{bi}"][ch] += 2 * kink_margin
        else:
            raise RuntimeError(f"could not harden ReLU kinks in block {bi}")
        in_ch = out_ch

    for _ in range(300):
        cache = _block_cache(model, waves, lengths)
        bad = np.unique(np.nonzero(np.abs(cache["pre_hidden"]) < kink_margin)[1])
        if bad.size == 0:
            break
        for ch in bad:
            model.params["bh"][ch] += 2 * kink_margin
    else:
        raise RuntimeError("could not harden hidden-layer kinks")
    return model


def full_fd_check(model, waves, lengths, targets, grads, h=1e-4,
                  rel_tol=1e-4, abs_tol=1e-6):
    """Central-difference check of every parameter; returns (worst_abs,
    worst_rel_among_abs_failures, n_failures)."""
    worst_abs = worst_rel = 0.0
    failures = 0
    for key in PARAM_ORDER:
        flat = model.params[key].ravel()
        analytic = grads[key].ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss_only(model, waves, lengths, targets)
            flat[idx] = orig - h
            down = loss_only(model, waves, lengths, targets)
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            err = abs(fd - analytic[idx])
            worst_abs = max(worst_abs, err)
            if err > abs_tol:
                rel = err / max(abs(fd), abs(analytic[idx]), 1e-300)
                worst_rel = max(worst_rel, rel)
                if rel > rel_tol:
                    failures += 1
    return worst_abs, worst_rel, failures
