"""Dataset records and synthetic data generation.

A record is one face image plus sidecar ground truth: morphable parameters,
occlusion and skin masks, and iris keypoints. Real photographs enter the
pipeline through the same sidecar layout (see docs/dataset_format.md);
running external estimators to produce those sidecars is out of scope here,
so the package ships a deterministic synthetic generator instead.

Record directory layout:
    rec_00000/
        image.png       8-bit grayscale
        params.json     morphable parameter sidecar
        occlusion.png   0/255 mask
        skin.png        0/255 mask
        iris.json       keypoint sidecar
        meta.json       {"id_tag": ...}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .conditioning import IrisKeypoints
from .masks import Mask, load_mask, save_mask
from .morphable import (
    DELTA_DEFAULT,
    K_ALPHA,
    K_BETA,
    K_GAMMA,
    MeshAsset,
    MorphableParams,
    default_asset,
    project_vertex_scalar,
    render,
)


@dataclass
class DatasetRecord:
    image: np.ndarray                    # (H, W) float32 in [0, 1]
    params: MorphableParams | None
    occlusion_mask: Mask
    skin_mask: Mask
    iris: IrisKeypoints
    id_tag: str

    @property
    def resolution(self) -> int:
        return self.image.shape[0]


def save_image01(image: np.ndarray, path):
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    PILImage.fromarray(arr, mode="L").save(path)


def load_image01(path) -> np.ndarray:
    arr = np.asarray(PILImage.open(path).convert("L"))
    return arr.astype(np.float32) / 255.0


def save_record(record: DatasetRecord, rec_dir):
    rec_dir = Path(rec_dir)
    rec_dir.mkdir(parents=True, exist_ok=True)
    save_image01(record.image, rec_dir / "image.png")
    if record.params is not None:
        (rec_dir / "params.json").write_text(
            json.dumps(record.params.to_dict(), sort_keys=True, indent=1)
        )
    save_mask(record.occlusion_mask, rec_dir / "occlusion.png")
    save_mask(record.skin_mask, rec_dir / "skin.png")
    (rec_dir / "iris.json").write_text(
        json.dumps(record.iris.to_dict(), sort_keys=True, indent=1)
    )
    (rec_dir / "meta.json").write_text(
        json.dumps({"id_tag": record.id_tag}, sort_keys=True)
    )


def load_record(rec_dir) -> DatasetRecord:
    rec_dir = Path(rec_dir)
    image = load_image01(rec_dir / "image.png")
    params_path = rec_dir / "params.json"
    params = None
    if params_path.exists():
        params = MorphableParams.from_dict(json.loads(params_path.read_text()))
    iris = IrisKeypoints.from_dict(json.loads((rec_dir / "iris.json").read_text()))
    meta = json.loads((rec_dir / "meta.json").read_text())
    return DatasetRecord(
        image=image,
        params=params,
        occlusion_mask=load_mask(rec_dir / "occlusion.png"),
        skin_mask=load_mask(rec_dir / "skin.png"),
        iris=iris,
        id_tag=meta["id_tag"],
    )


def load_dataset(root) -> list[DatasetRecord]:
    root = Path(root)
    rec_dirs = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("rec_"))
    if not rec_dirs:
        raise FileNotFoundError(f"no rec_* directories under {root}")
    return [load_record(p) for p in rec_dirs]


def _truncnorm(rng: np.random.Generator, size, clip: float = 2.5) -> np.ndarray:
    return np.clip(rng.standard_normal(size), -clip, clip)


def sample_params(rng: np.random.Generator) -> MorphableParams:
    """Random but renderable parameters for synthetic records."""
    delta = DELTA_DEFAULT.copy()
    delta[[0, 1, 2, 3, 6]] += 0.15 * _truncnorm(rng, 5)
    return MorphableParams(
        alpha=_truncnorm(rng, K_ALPHA),
        beta=_truncnorm(rng, K_BETA),
        gamma=_truncnorm(rng, K_GAMMA),
        delta=delta,
        rotation=np.array([
            rng.uniform(-0.25, 0.25),
            rng.uniform(-0.25, 0.25),
            rng.uniform(-0.15, 0.15),
        ]),
        t_xy=rng.uniform(-0.15, 0.15, size=2),
        scale=rng.uniform(-2.0, 0.5),
    )


def _background(rng: np.random.Generator, resolution: int) -> np.ndarray:
    """Smooth procedural backdrop: gradient plus two soft blobs."""
    yy, xx = np.mgrid[0:resolution, 0:resolution] / resolution
    base = rng.uniform(0.2, 0.8)
    gx, gy = rng.uniform(-0.3, 0.3, size=2)
    bg = base + gx * (xx - 0.5) + gy * (yy - 0.5)
    for _ in range(2):
        cx, cy = rng.uniform(0, 1, size=2)
        amp = rng.uniform(-0.25, 0.25)
        sig = rng.uniform(0.1, 0.3)
        bg = bg + amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sig ** 2))
    return np.clip(bg, 0.0, 1.0)


def occluder_footprint(rng: np.random.Generator, resolution: int) -> tuple[Mask, float]:
    """Random occluder bar crossing the frame, plus its gray tone."""
    width = max(3, resolution // 8)
    pos = int(rng.integers(resolution // 4, 3 * resolution // 4))
    vertical = bool(rng.integers(2))
    tone = float(rng.choice([0.08, 0.92]))
    grid = np.zeros((resolution, resolution), dtype=np.uint8)
    if vertical:
        grid[:, pos:pos + width] = 1
    else:
        grid[pos:pos + width, :] = 1
    return Mask(grid), tone


def make_record(params: MorphableParams, rng: np.random.Generator,
                resolution: int, id_tag: str, asset: MeshAsset | None = None,
                occluder_prob: float = 0.2) -> DatasetRecord:
    asset = asset or default_asset()
    out = render(asset, params, resolution)
    m_ras = out.mask
    image = m_ras.grid * out.image + (1 - m_ras.grid) * _background(rng, resolution)

    if rng.uniform() < occluder_prob:
        bar, tone = occluder_footprint(rng, resolution)
        image = np.where(bar.grid > 0, tone, image)
        m_occ = Mask(bar.grid * m_ras.grid)
    else:
        m_occ = Mask.zeros((resolution, resolution))

    skin_field = project_vertex_scalar(
        asset, params, resolution, asset.skin_label.astype(np.float64)
    )
    skin = Mask.from_bool((skin_field > 0.5) & (m_ras.grid > 0) & (m_occ.grid == 0))

    iris_px = out.landmarks_px[:2]
    visible = np.zeros(2, dtype=bool)
    for k in range(2):
        x, y = iris_px[k]
        inside = 0 <= x < resolution and 0 <= y < resolution
        if inside:
            j, i = int(np.clip(x, 0, resolution - 1)), int(np.clip(y, 0, resolution - 1))
            inside = m_occ.grid[i, j] == 0
        visible[k] = inside
    iris = IrisKeypoints(points=iris_px, visible=visible)

    return DatasetRecord(
        image=image.astype(np.float32),
        params=params,
        occlusion_mask=m_occ,
        skin_mask=skin,
        iris=iris,
        id_tag=id_tag,
    )


def synth_dataset(n: int, rng: np.random.Generator, out_dir,
                  resolution: int = 64, asset: MeshAsset | None = None,
                  occluder_prob: float = 0.2) -> list[DatasetRecord]:
    """Generate n synthetic records with full sidecars under out_dir.

    Fixed rng state gives a byte-identical directory on re-run.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n):
        params = sample_params(rng)
        rec = make_record(params, rng, resolution, id_tag=f"synth_{i:05d}",
                          asset=asset, occluder_prob=occluder_prob)
        save_record(rec, out_dir / f"rec_{i:05d}")
        records.append(rec)
    return records


def alpha_pool_from_records(records) -> np.ndarray:
    """Shape-coefficient pool drawn from the training data itself."""
    alphas = [r.params.alpha for r in records if r.params is not None]
    if not alphas:
        raise ValueError("no records with parameter sidecars")
    return np.stack(alphas, axis=0)
