"""Disentangled condition signals: identity vector, skin vector, iris stickmen.

The identity encoder stands in for a pretrained face recognizer: a small
frozen convnet with a fixed init seed (512-d output, L2-normalized). Any
module with the same (B, 1, H, W) -> (B, D) interface can be plugged in.
The skin encoder is trainable and deliberately low-dimensional (64) so it
can carry tone/illumination but not geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ShapeMismatch
from .masks import Mask

ID_DIM = 512
SKIN_DIM = 64

JITTER_BRIGHTNESS = 0.3
JITTER_CONTRAST = 0.3
JITTER_HUE = 0.1

KP_RADIUS = 3.0


@dataclass
class IrisKeypoints:
    """Left/right iris centers in pixel coordinates plus visibility flags."""

    points: np.ndarray   # (2, 2) float: rows [left, right], columns (x, y)
    visible: np.ndarray  # (2,) bool

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(2, 2)
        self.visible = np.asarray(self.visible, dtype=bool).reshape(2)

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "visible": self.visible.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "IrisKeypoints":
        return cls(np.asarray(d["points"]), np.asarray(d["visible"]))


@dataclass
class ConditionBundle:
    c_id: np.ndarray      # (ID_DIM,) unit vector
    c_skin: np.ndarray    # (SKIN_DIM,)
    kp_image: np.ndarray  # (H, W) float32 in [0, 1]


def _seeded_init(module: nn.Module, seed: int):
    gen = torch.Generator().manual_seed(seed)
    for p in module.parameters():
        if p.dim() > 1:
            nn.init.kaiming_normal_(p, generator=gen)
        else:
            nn.init.zeros_(p)


class IdentityEncoder(nn.Module):
    """Frozen convolutional face embedder, D-dim unit output by convention."""

    def __init__(self, dim: int = ID_DIM, seed: int = 101, in_channels: int = 1):
        super().__init__()
        self.dim = dim
        widths = (16, 32, 64, 64)
        layers = []
        prev = in_channels
        for w in widths:
            layers += [nn.Conv2d(prev, w, 3, stride=2, padding=1), nn.SiLU()]
            prev = w
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(prev, dim)
        _seeded_init(self, seed)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, C, H, W) in [-1, 1]
        h = self.features(x).mean(dim=(2, 3))
        return self.head(h)

    def embed_normalized(self, x: torch.Tensor) -> torch.Tensor:
        e = self.forward(x)
        return e / e.norm(dim=1, keepdim=True).clamp_min(1e-12)


class SkinEncoder(nn.Module):
    """Trainable residual encoder pooling down to a 64-d skin vector."""

    def __init__(self, dim: int = SKIN_DIM, in_channels: int = 1, seed: int = 202):
        super().__init__()
        self.dim = dim
        self.stem = nn.Conv2d(in_channels, 16, 3, padding=1)
        self.block1 = _ResDown(16, 32)
        self.block2 = _ResDown(32, 64)
        self.head = nn.Linear(64, dim)
        _seeded_init(self, seed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = torch.nn.functional.silu(self.stem(x))
        h = self.block2(self.block1(h))
        return self.head(h.mean(dim=(2, 3)))


class _ResDown(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1, stride=2)

    def forward(self, x):
        h = torch.nn.functional.silu(self.conv1(x))
        h = torch.nn.functional.silu(self.conv2(h))
        return h + self.skip(x)


def to_tensor01(image: np.ndarray) -> torch.Tensor:
    """(H, W) or (H, W, C) [0,1] numpy image -> (1, C, H, W) float tensor."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None, None]
    else:
        arr = arr.transpose(2, 0, 1)[None]
    return torch.from_numpy(np.ascontiguousarray(arr))


def color_jitter(image: np.ndarray, rng: np.random.Generator,
                 brightness: float = JITTER_BRIGHTNESS,
                 contrast: float = JITTER_CONTRAST,
                 hue: float = JITTER_HUE) -> np.ndarray:
    """Random brightness/contrast (and hue, for color images) perturbation.

    Operates on [0, 1] images and clips back into range. Hue is a no-op on
    single-channel input.
    """
    img = np.asarray(image, dtype=np.float32)
    b = rng.uniform(-brightness, brightness)
    c = rng.uniform(-contrast, contrast)
    h = rng.uniform(-hue, hue)
    out = img + b
    mean = out.mean()
    out = (out - mean) * (1.0 + c) + mean
    if img.ndim == 3 and img.shape[2] == 3 and hue > 0:
        # Cheap hue rotation: circular shift of channel weights.
        w = np.array([1 - abs(h) * 3, max(h, 0) * 3, max(-h, 0) * 3], dtype=np.float32)
        w = np.clip(w, 0, None)
        w /= w.sum()
        out = np.stack([
            out[..., 0] * w[0] + out[..., 1] * w[1] + out[..., 2] * w[2],
            out[..., 1] * w[0] + out[..., 2] * w[1] + out[..., 0] * w[2],
            out[..., 2] * w[0] + out[..., 0] * w[1] + out[..., 1] * w[2],
        ], axis=-1)
    return np.clip(out, 0.0, 1.0)


def encode_identity(image: np.ndarray, encoder: IdentityEncoder,
                    rng: np.random.Generator | None = None,
                    jitter: bool = False,
                    brightness: float = JITTER_BRIGHTNESS,
                    contrast: float = JITTER_CONTRAST,
                    hue: float = JITTER_HUE) -> np.ndarray:
    """Identity embedding of a [0,1] image; unit L2 norm.

    With jitter on, a random color perturbation is applied before encoding
    so the embedding cannot be a reliable carrier of absolute skin tone.
    """
    img = np.asarray(image, dtype=np.float32)
    if jitter:
        if rng is None:
            raise ValueError("jitter requires an rng")
        img = color_jitter(img, rng, brightness=brightness, contrast=contrast, hue=hue)
    with torch.no_grad():
        emb = encoder.embed_normalized(to_tensor01(img) * 2.0 - 1.0)
    return emb[0].numpy().astype(np.float64)


def skin_masked_input(image: np.ndarray, skin_mask: Mask) -> np.ndarray:
    """The exact [0,1] image the skin encoder sees (non-skin zeroed)."""
    img = np.asarray(image, dtype=np.float32)
    if img.shape[:2] != skin_mask.shape:
        raise ShapeMismatch(f"image {img.shape} vs skin mask {skin_mask.shape}")
    keep = skin_mask.grid.astype(img.dtype)
    if img.ndim == 3:
        keep = keep[:, :, None]
    return img * keep


def encode_skin(image: np.ndarray, skin_mask: Mask, encoder: SkinEncoder) -> np.ndarray:
    """Skin vector of a [0,1] image with non-skin pixels zeroed first."""
    masked = skin_masked_input(image, skin_mask)
    with torch.no_grad():
        vec = encoder(to_tensor01(masked) * 2.0 - 1.0)
    return vec[0].numpy().astype(np.float64)


def render_iris_stickmen(kps: IrisKeypoints, resolution: int,
                         radius: float = KP_RADIUS) -> np.ndarray:
    """Binary disc rendering of the visible iris keypoints, no anti-aliasing."""
    out = np.zeros((resolution, resolution), dtype=np.float32)
    centers = np.arange(resolution, dtype=np.float64) + 0.5
    for k in range(2):
        if not kps.visible[k]:
            continue
        x, y = kps.points[k]
        dx2 = (centers - x) ** 2
        dy2 = (centers - y) ** 2
        disc = dy2[:, None] + dx2[None, :] <= radius * radius
        out[disc] = 1.0
    return out


def perturb_keypoints(kps: IrisKeypoints, rng: np.random.Generator,
                      resolution: int, sigma: float | None = None) -> IrisKeypoints:
    """Isotropic Gaussian jitter of visible keypoints, clipped to the frame.

    Default sigma is 5% of the image width.
    """
    if sigma is None:
        sigma = 0.05 * resolution
    pts = kps.points.copy()
    for k in range(2):
        if not kps.visible[k] or sigma <= 0:
            continue
        pts[k] = np.clip(pts[k] + rng.normal(0.0, sigma, size=2), 0.0, resolution)
    return IrisKeypoints(points=pts, visible=kps.visible.copy())
