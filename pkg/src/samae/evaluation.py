"""Metric suite and report generation.

Identity similarity/consistency use a held-out embedder (different fixed
seed than the training-loss encoder). Geometry distances compare morphable
parameters directly, which at desk scale are exact ground truth. The Overall
score standardizes each metric column across methods (population std),
flips the higher-is-better columns, and averages, so lower is better.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .conditioning import IdentityEncoder, to_tensor01
from .data import save_image01
from .errors import EmptyReport
from .morphable import MorphableParams

METRIC_COLUMNS = ("id_sim", "id_cons", "shape", "expression", "head_pose", "fid")
HIGHER_BETTER = frozenset({"id_sim", "id_cons"})

EVAL_ENCODER_SEED = 907


def held_out_encoder() -> IdentityEncoder:
    """Identity embedder reserved for evaluation, never used in training."""
    return IdentityEncoder(seed=EVAL_ENCODER_SEED)


def _embed(image: np.ndarray, encoder) -> np.ndarray:
    import torch

    with torch.no_grad():
        e = encoder.embed_normalized(to_tensor01(np.asarray(image, dtype=np.float32)) * 2 - 1)
    return e[0].numpy().astype(np.float64)


def id_similarity(swapped: np.ndarray, source: np.ndarray, encoder) -> float:
    """Cosine similarity between swapped and source identity embeddings."""
    a = _embed(swapped, encoder)
    b = _embed(source, encoder)
    return float(np.dot(a, b))


def id_consistency(swapped_set, encoder) -> float:
    """Mean pairwise cosine similarity over swaps of one source."""
    if len(swapped_set) < 2:
        raise ValueError("need at least 2 swapped images")
    embs = np.stack([_embed(img, encoder) for img in swapped_set])
    n = len(embs)
    sims = [float(embs[i] @ embs[j]) for i in range(n) for j in range(i + 1, n)]
    return float(np.mean(sims))


def geometry_distances(swapped_params: MorphableParams,
                       source_params: MorphableParams,
                       target_params: MorphableParams) -> dict:
    """Shape vs source, expression and head pose vs target (L2, radians)."""
    return {
        "shape": float(np.linalg.norm(swapped_params.alpha - source_params.alpha)),
        "expression": float(np.linalg.norm(swapped_params.beta - target_params.beta)),
        "head_pose": float(np.linalg.norm(swapped_params.rotation - target_params.rotation)),
    }


def default_fid_features(seed: int = 404, dim: int = 48):
    """Pooled features of the frozen random pyramid, as an (N,H,W)->(N,D) callable."""
    import torch

    from .losses import PerceptualPyramid

    net = PerceptualPyramid(widths=(12, 24, dim), seed=seed)

    def features(images) -> np.ndarray:
        arr = np.asarray(images, dtype=np.float32)
        x = torch.from_numpy(arr[:, None]) * 2 - 1
        with torch.no_grad():
            f = net(x)[-1].mean(dim=(2, 3))
        return f.numpy().astype(np.float64)

    return features


def toy_fid(set_a, set_b, feature_net) -> float:
    """Frechet distance between feature distributions of two image sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)); symmetric and
    >= 0 up to numerical tolerance.
    """
    fa = np.asarray(feature_net(set_a), dtype=np.float64)
    fb = np.asarray(feature_net(set_b), dtype=np.float64)
    dim = fa.shape[1]
    if min(len(fa), len(fb)) < 2 * dim:
        warnings.warn(
            f"fewer than {2 * dim} samples per set for {dim}-d features; "
            "covariance estimate will be noisy", stacklevel=2)
    mu_a, mu_b = fa.mean(0), fb.mean(0)
    cov_a = np.cov(fa, rowvar=False)
    cov_b = np.cov(fb, rowvar=False)
    covmean = scipy.linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(covmean))


@dataclass
class MetricTable:
    """Per-method metric rows; each row maps METRIC_COLUMNS to values."""

    rows: dict = field(default_factory=dict)

    def add(self, method: str, **values):
        missing = set(METRIC_COLUMNS) - set(values)
        if missing:
            raise ValueError(f"missing columns for {method!r}: {sorted(missing)}")
        if not all(np.isfinite(v) for v in values.values()):
            raise ValueError(f"non-finite metric for {method!r}")
        self.rows[method] = {c: float(values[c]) for c in METRIC_COLUMNS}

    def column(self, name: str) -> np.ndarray:
        return np.array([self.rows[m][name] for m in self.rows])


def overall_score(table: MetricTable, ddof: int = 0) -> dict:
    """Signed z-score average per method; lower is better.

    Higher-is-better columns are negated before averaging. Zero-variance
    columns contribute nothing. Population std (ddof=0) is the frozen
    default convention.
    """
    methods = list(table.rows)
    if len(methods) < 2:
        raise ValueError("standardization needs at least 2 methods")
    scores = np.zeros(len(methods))
    for col in METRIC_COLUMNS:
        vals = table.column(col)
        std = vals.std(ddof=ddof)
        if std == 0:
            continue
        z = (vals - vals.mean()) / std
        if col in HIGHER_BETTER:
            z = -z
        scores += z
    scores /= len(METRIC_COLUMNS)
    return dict(zip(methods, scores.tolist()))


def write_metric_table(table: MetricTable, out_dir) -> dict:
    """CSV + JSON dump of the table with the overall column appended."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    overall = overall_score(table)
    with (out_dir / "metrics.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", *METRIC_COLUMNS, "overall"])
        for method, row in table.rows.items():
            writer.writerow([method, *[repr(row[c]) for c in METRIC_COLUMNS],
                             repr(overall[method])])
    payload = {m: {**row, "overall": overall[m]} for m, row in table.rows.items()}
    (out_dir / "metrics.json").write_text(json.dumps(payload, indent=1, sort_keys=True))
    return overall


def read_metric_table(csv_path) -> MetricTable:
    table = MetricTable()
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            table.add(row["method"], **{c: float(row[c]) for c in METRIC_COLUMNS})
    return table


def comparison_grid(sources, targets, swapped) -> np.ndarray:
    """Side-by-side panel, one row per case: source | target | swapped.

    N same-size (H, W) inputs per column give an (N*H, 3*W) image.
    """
    rows = [np.concatenate([s, t, w], axis=1)
            for s, t, w in zip(sources, targets, swapped, strict=True)]
    if not rows:
        raise ValueError("need at least one case")
    return np.concatenate(rows, axis=0)


def report(run_dir) -> list:
    """Write CSV/JSON tables and the comparison grid from a prepared eval run.

    Expects run_dir/raw_metrics.json (method rows) and optional
    run_dir/swaps/NNN_{source,target,swapped}.npy triples.
    """
    run_dir = Path(run_dir)
    raw = run_dir / "raw_metrics.json"
    if not raw.exists():
        raise EmptyReport(f"no metrics at {raw}")
    rows = json.loads(raw.read_text())
    if not rows:
        raise EmptyReport("metric table is empty")
    table = MetricTable()
    for method, vals in rows.items():
        table.add(method, **{c: vals[c] for c in METRIC_COLUMNS})
    write_metric_table(table, run_dir)
    written = [run_dir / "metrics.csv", run_dir / "metrics.json"]

    swaps = run_dir / "swaps"
    if swaps.exists():
        triples = [[], [], []]
        for src_path in sorted(swaps.glob("*_source.npy")):
            stem = src_path.name[: -len("_source.npy")]
            triples[0].append(np.load(src_path))
            triples[1].append(np.load(swaps / f"{stem}_target.npy"))
            triples[2].append(np.load(swaps / f"{stem}_swapped.npy"))
        if triples[0]:
            out = run_dir / "grid.png"
            save_image01(comparison_grid(*triples), out)
            written.append(out)
    return written
