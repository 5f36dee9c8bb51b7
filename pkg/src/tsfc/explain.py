"""Grad-CAM over the last conv layer of the channel encoder."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError
from .model import ModelParams, forward


@dataclass
class CamMap:
    channel: int
    data: np.ndarray
    target_class: int


def bilinear_resize(img: np.ndarray, size: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of a 2-d array to size x size."""
    h, w = img.shape
    if (h, w) == (size, size):
        return img.astype(np.float64, copy=True)

    def coords(n_in):
        pos = (np.arange(size) + 0.5) * (n_in / size) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = coords(h)
    c0, c1, fc = coords(w)
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def cam_from_activations(activations: np.ndarray, gradients: np.ndarray, size: int) -> np.ndarray:
    """relu(sum_c mean(dA_c) * A_c), resized and divided by its max."""
    alpha = gradients.mean(axis=(1, 2))
    raw = np.maximum(np.tensordot(alpha, activations, axes=1), 0.0)
    cam = np.maximum(bilinear_resize(raw, size), 0.0)
    peak = cam.max()
    return cam / peak if peak > 0 else cam


def gradcam(params: ModelParams, images, target_class: int, channel: int) -> CamMap:
    if not 0 <= channel < params.num_channels:
        raise ValueError(f"channel {channel} out of range for {params.num_channels} channels")
    if not 0 <= target_class < params.num_classes:
        raise ValueError(f"target_class {target_class} out of range")
    for name, t in params.tensors.items():
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"parameter {name} contains non-finite values")
    out = forward(images, params)
    score = ad.select(out.logits, target_class)
    ad.backward(score)
    act = out.traces[channel].last_conv
    grad = act.grad if act.grad is not None else np.zeros_like(act.data)
    ad.zero_grads(params.parameters())
    cam = cam_from_activations(act.data.astype(np.float64), grad.astype(np.float64), params.image_size)
    return CamMap(channel, cam, target_class)


def overlay_pixels(cam: np.ndarray, underlay: np.ndarray) -> np.ndarray:
    """RGB uint8 image: grayscale underlay blended toward pure green by the CAM value."""
    if cam.shape != underlay.shape:
        raise ValueError(f"CAM {cam.shape} and underlay {underlay.shape} differ in size")
    lo, hi = float(underlay.min()), float(underlay.max())
    gray = (underlay - lo) * (255.0 / (hi - lo)) if hi > lo else np.zeros_like(underlay, dtype=np.float64)
    c = np.clip(cam, 0.0, 1.0)
    base = gray * (1.0 - c)
    rgb = np.stack([base, base + 255.0 * c, base], axis=-1)
    return np.rint(rgb).astype(np.uint8)


def export_cam(cam: CamMap, underlay, path) -> Path:
    """Write a plain-text PPM (P3) overlay."""
    under = underlay.data if hasattr(underlay, "data") else np.asarray(underlay)
    rgb = overlay_pixels(cam.data, np.asarray(under, dtype=np.float64))
    h, w, _ = rgb.shape
    lines = [" ".join(str(v) for v in row.reshape(-1)) for row in rgb]
    path = Path(path)
    path.write_text(f"P3\n{w} {h}\n255\n" + "\n".join(lines) + "\n")
    return path


def read_ppm(path) -> np.ndarray:
    tokens = Path(path).read_text().split()
    if tokens[0] != "P3":
        raise ValueError(f"{path}: not a plain PPM file")
    w, h = int(tokens[1]), int(tokens[2])
    return np.array(tokens[4:4 + 3 * w * h], dtype=int).reshape(h, w, 3)


def half_masses(cam: np.ndarray) -> tuple[float, float]:
    """CAM mass in the early-time and late-time diagonal quadrants."""
    s = cam.shape[0]
    h = s // 2
    return float(cam[:h, :h].sum()), float(cam[s - h:, s - h:].sum())
