"""Binary mask algebra and the perforation-confusion mask constructions.

Masks are {0,1} uint8 grids. "+" on masks means set union and "-" means set
difference, applied union-before-difference so occluded pixels can never
re-enter the final mask.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from PIL import Image as PILImage

from .errors import EmptyPool, ShapeMismatch
from .morphable import MeshAsset, MorphableParams, neutralize_albedo, render_mask


@dataclass(frozen=True)
class Mask:
    grid: np.ndarray  # (H, W) uint8 in {0, 1}

    def __post_init__(self):
        g = np.ascontiguousarray(self.grid, dtype=np.uint8)
        if g.ndim != 2:
            raise ValueError("mask grid must be 2-D")
        if not np.isin(g, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)

    @property
    def shape(self):
        return self.grid.shape

    @property
    def area(self) -> int:
        return int(self.grid.sum())

    @classmethod
    def zeros(cls, shape) -> "Mask":
        return cls(np.zeros(shape, dtype=np.uint8))

    @classmethod
    def ones(cls, shape) -> "Mask":
        return cls(np.ones(shape, dtype=np.uint8))

    @classmethod
    def from_bool(cls, arr) -> "Mask":
        return cls(np.asarray(arr).astype(np.uint8))


def _check_same_shape(*masks: Mask):
    shapes = {m.shape for m in masks}
    if len(shapes) > 1:
        raise ShapeMismatch(f"mask shapes differ: {sorted(shapes)}")


def union(a: Mask, b: Mask) -> Mask:
    _check_same_shape(a, b)
    return Mask(np.maximum(a.grid, b.grid))


def subtract(a: Mask, b: Mask) -> Mask:
    _check_same_shape(a, b)
    return Mask(a.grid * (1 - b.grid))


def final_mask_basic(m_ras: Mask, m_occ: Mask) -> Mask:
    """Facial mask: mesh foreground minus occluded pixels."""
    return subtract(m_ras, m_occ)


def perforation_confusion_train(
    m_ras: Mask,
    m_occ: Mask,
    asset: MeshAsset,
    params: MorphableParams,
    alpha_pool: np.ndarray,
    rng: np.random.Generator,
):
    """Shape-agnostic training mask.

    Draws a random shape coefficient from the pool, renders the resulting
    random mesh mask with all non-shape fields (and neutral albedo) kept
    from `params`, and returns (union(m_ras, m_rand) - m_occ, random params).
    The result is a superset of both constituent basic masks.
    """
    pool = np.asarray(alpha_pool, dtype=np.float64)
    if pool.ndim == 1:
        pool = pool[None, :]
    if pool.shape[0] == 0:
        raise EmptyPool("alpha pool is empty")
    idx = int(rng.integers(pool.shape[0]))
    v_rand = replace(neutralize_albedo(params), alpha=pool[idx])
    m_rand = render_mask(asset, v_rand, m_ras.shape[0])
    return subtract(union(m_ras, m_rand), m_occ), v_rand


def perforation_mask_infer(m_ras_tgt: Mask, m_ras_swap: Mask, m_occ: Mask) -> Mask:
    """Inference-time mask: target and swap mesh masks unioned, occlusion cut."""
    _check_same_shape(m_ras_tgt, m_ras_swap, m_occ)
    return subtract(union(m_ras_tgt, m_ras_swap), m_occ)


def masked_image(image: np.ndarray, m: Mask) -> np.ndarray:
    """Zero the pixels inside the mask, leave the rest untouched.

    Accepts (H, W) or (H, W, C) arrays.
    """
    img = np.asarray(image)
    if img.shape[:2] != m.shape:
        raise ShapeMismatch(f"image {img.shape} vs mask {m.shape}")
    keep = (1 - m.grid).astype(img.dtype)
    if img.ndim == 3:
        keep = keep[:, :, None]
    return img * keep


def save_mask(m: Mask, path):
    PILImage.fromarray(m.grid * np.uint8(255), mode="L").save(path)


def load_mask(path) -> Mask:
    arr = np.asarray(PILImage.open(path).convert("L"))
    return Mask((arr >= 128).astype(np.uint8))
