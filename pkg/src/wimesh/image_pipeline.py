"""From per-frame AoA images to body-only images and network-style input tensors.

A moving body only ever adds energy to an AoA image, so the per-pixel temporal
minimum over a window is a robust picture of the static surroundings.  The
residual after subtracting it is then cut at ``mu + kappa * sigma`` of its
nonzero pixels to drop weak indirect reflections.  Fifteen thresholded frames
from each of two receivers make one input tensor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .music import IMAGE_SIZE, AoaImage

DEFAULT_STATIC_WINDOW = 30
DEFAULT_KAPPA = 2.0
TENSOR_FRAMES = 15
TENSOR_RECEIVERS = 2
TENSOR_MAGIC = b"WMT1"


def _values(img) -> np.ndarray:
    return np.asarray(img.values if hasattr(img, "values") else img, dtype=float)


@dataclass(frozen=True)
class StaticProfile:
    values: np.ndarray
    window_len: int

    def __post_init__(self):
        if self.window_len < 2:
            raise ValueError("static window needs at least two frames")
        if np.any(self.values < 0):
            raise ValueError("static profile must be nonnegative")


@dataclass(frozen=True)
class BodyImage:
    values: np.ndarray
    threshold_used: float

    @property
    def support(self) -> np.ndarray:
        return self.values > 0


@dataclass(frozen=True)
class InputTensor:
    data: np.ndarray  # (T, R, elevation, azimuth)
    frame_timestamps: np.ndarray

    def __post_init__(self):
        t = self.data.shape[0]
        if len(self.frame_timestamps) != t:
            raise ValueError("one timestamp per frame")
        if t > 1 and np.any(np.diff(self.frame_timestamps) <= 0):
            raise ValueError("frame timestamps must be strictly increasing")


def estimate_static(frames: Sequence) -> StaticProfile:
    if len(frames) < 2:
        raise ValueError("static window needs at least two frames")
    stack = np.stack([_values(f) for f in frames])
    return StaticProfile(stack.min(axis=0), len(frames))


def subtract_static(frame, profile) -> np.ndarray:
    f = _values(frame)
    p = _values(profile)
    if f.shape != p.shape:
        raise ValueError(f"shape mismatch {f.shape} vs {p.shape}")
    return np.maximum(f - p, 0.0)


def adaptive_threshold(residual, kappa: float = DEFAULT_KAPPA) -> BodyImage:
    r = _values(residual)
    nz = r[r > 0]
    if nz.size == 0:
        return BodyImage(np.zeros_like(r), 0.0)
    thr = float(nz.mean() + kappa * nz.std())
    return BodyImage(np.where(r >= thr, r, 0.0), max(thr, 0.0))


def body_images(frames: Sequence, window: int = DEFAULT_STATIC_WINDOW,
                kappa: float = DEFAULT_KAPPA) -> list[BodyImage]:
    """Static removal plus thresholding for a whole stream.

    Frame ``i`` uses the profile of the window ending at ``i`` (or the first
    ``window`` frames near the start), clipped to the stream length.
    """
    n = len(frames)
    if n < 2:
        raise ValueError("need at least two frames")
    w = min(window, n)
    vals = [_values(f) for f in frames]
    out = []
    for i in range(n):
        lo = max(0, min(i - w + 1, n - w))
        prof = estimate_static(vals[lo:lo + w])
        out.append(adaptive_threshold(subtract_static(vals[i], prof), kappa))
    return out


def aggregate_frames(per_receiver: Sequence[Sequence], timestamps=None,
                     frames: int = TENSOR_FRAMES) -> tuple[InputTensor, np.ndarray]:
    """Stack ``frames`` images from each of two receivers.

    Returns the tensor and the per-receiver composite (max over time).
    """
    if len(per_receiver) != TENSOR_RECEIVERS:
        raise ValueError(f"need exactly {TENSOR_RECEIVERS} receivers")
    if any(len(r) != frames for r in per_receiver):
        raise ValueError(f"need exactly {frames} frames per receiver")
    data = np.stack([np.stack([_values(img) for img in r]) for r in per_receiver], axis=1)
    if timestamps is None:
        timestamps = np.arange(frames, dtype=float)
    tensor = InputTensor(data, np.asarray(timestamps, dtype=float))
    return tensor, data.max(axis=0)


def support_coverage(single, composite) -> float:
    """Fraction of the composite's nonzero pixels that ``single`` also covers."""
    comp = _values(composite) > 0
    if not comp.any():
        return 0.0
    return float(np.sum((_values(single) > 0) & comp) / comp.sum())


def write_tensor(path, tensor: InputTensor) -> None:
    t, r, h, w = tensor.data.shape
    if t != TENSOR_FRAMES:
        raise ValueError(f"tensor files hold exactly {TENSOR_FRAMES} frames")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC + struct.pack("<3I", r, h, w))
        fh.write(tensor.data.astype("<f4").tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != TENSOR_MAGIC:
        raise ValueError("not a tensor file (bad magic)")
    r, h, w = struct.unpack("<3I", raw[4:16])
    n = TENSOR_FRAMES * r * h * w
    if len(raw) != 16 + 4 * n:
        raise ValueError(f"tensor payload is {len(raw) - 16} bytes, expected {4 * n}")
    return np.frombuffer(raw, dtype="<f4", offset=16).reshape(TENSOR_FRAMES, r, h, w).astype(float)


def empty_image() -> np.ndarray:
    return np.zeros((IMAGE_SIZE, IMAGE_SIZE))


__all__ = [
    "AoaImage", "BodyImage", "InputTensor", "StaticProfile", "adaptive_threshold", "aggregate_frames",
    "body_images", "estimate_static", "read_tensor", "subtract_static", "support_coverage", "write_tensor",
]
