"""Toy linear morphable face model and orthographic rasterizer.

The model is a deformed ellipsoid head with eye/nose/mouth relief, linear
shape/expression displacement bases, a linear grayscale albedo basis, and
band-2 spherical-harmonics lighting. It is small enough for CPU tests while
keeping the usual parameter interface of production morphable models.

Conventions:
    - Model space: face half-width ~1, +y up, +z toward the camera.
    - Camera: orthographic, looking down -z. Lighting is fixed in the
      camera frame.
    - Screen space: x right, y down, pixel centers at (i + 0.5, j + 0.5).
    - Projected face half-width = BASE_FACE_RADIUS_FRAC * resolution *
      (1 + 0.1 * s) pixels, so s in [-4, 1] spans a 0.6x-1.1x size range.
    - Rasterization uses a top-left fill rule; depth ties keep the lower
      triangle index. Same inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .container import read_container, write_container
from .errors import CorruptAsset, DegenerateMesh, MissingSidecar

K_ALPHA = 8
K_BETA = 8
K_GAMMA = 8
SH_DIM = 9

BASE_FACE_RADIUS_FRAC = 0.36

# Albedo basis column 0 is the exact residual to a white albedo map, so this
# coefficient vector reconstructs constant white.
GAMMA_NEUTRAL = np.array([1.0, 0, 0, 0, 0, 0, 0, 0], dtype=np.float64)

# Ambient + frontal light, rotationally symmetric about the view axis.
DELTA_DEFAULT = np.array([1.8, 0, 0.9, 0, 0, 0, 0.2, 0, 0], dtype=np.float64)

_N_LAT = 34
_N_LON = 44
_AXES = (0.82, 1.0, 0.62)


def _as_ro(a, dtype=np.float64):
    out = np.ascontiguousarray(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MorphableParams:
    """Lighting and geometric parameter tuple of one face.

    alpha/beta/gamma are shape/expression/albedo basis weights, delta holds
    the 9 band-2 SH lighting coefficients, rotation is (pitch, yaw, roll)
    in radians, t_xy is in normalized image units ([-1, 1] spans the frame)
    and scale follows the 0.6x-1.1x convention above.
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    rotation: np.ndarray
    t_xy: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", _as_ro(self.alpha))
        object.__setattr__(self, "beta", _as_ro(self.beta))
        object.__setattr__(self, "gamma", _as_ro(self.gamma))
        object.__setattr__(self, "delta", _as_ro(self.delta))
        object.__setattr__(self, "rotation", _as_ro(self.rotation))
        object.__setattr__(self, "t_xy", _as_ro(self.t_xy))
        object.__setattr__(self, "scale", float(self.scale))
        if self.alpha.shape != (K_ALPHA,):
            raise ValueError(f"alpha must have length {K_ALPHA}")
        if self.beta.shape != (K_BETA,):
            raise ValueError(f"beta must have length {K_BETA}")
        if self.gamma.shape != (K_GAMMA,):
            raise ValueError(f"gamma must have length {K_GAMMA}")
        if self.delta.shape != (SH_DIM,):
            raise ValueError(f"delta must have length {SH_DIM}")
        if self.rotation.shape != (3,):
            raise ValueError("rotation must be (pitch, yaw, roll)")
        if self.t_xy.shape != (2,):
            raise ValueError("t_xy must have length 2")
        for name in ("alpha", "beta", "gamma", "delta", "rotation", "t_xy"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")
        if not np.isfinite(self.scale):
            raise ValueError("scale must be finite")
        if np.any(np.abs(self.rotation) > np.pi):
            raise ValueError("Euler angles must lie in [-pi, pi]")

    @classmethod
    def zero(cls) -> "MorphableParams":
        return cls(
            alpha=np.zeros(K_ALPHA),
            beta=np.zeros(K_BETA),
            gamma=np.zeros(K_GAMMA),
            delta=DELTA_DEFAULT.copy(),
            rotation=np.zeros(3),
            t_xy=np.zeros(2),
            scale=0.0,
        )

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "gamma": self.gamma.tolist(),
            "delta": self.delta.tolist(),
            "rotation": self.rotation.tolist(),
            "t_xy": self.t_xy.tolist(),
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MorphableParams":
        return cls(
            alpha=np.asarray(d["alpha"]),
            beta=np.asarray(d["beta"]),
            gamma=np.asarray(d["gamma"]),
            delta=np.asarray(d["delta"]),
            rotation=np.asarray(d["rotation"]),
            t_xy=np.asarray(d["t_xy"]),
            scale=d["scale"],
        )

    def allclose(self, other: "MorphableParams", atol=0.0) -> bool:
        return (
            np.allclose(self.alpha, other.alpha, atol=atol)
            and np.allclose(self.beta, other.beta, atol=atol)
            and np.allclose(self.gamma, other.gamma, atol=atol)
            and np.allclose(self.delta, other.delta, atol=atol)
            and np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.t_xy, other.t_xy, atol=atol)
            and abs(self.scale - other.scale) <= atol
        )


@dataclass
class MeshAsset:
    """Template mesh plus linear bases.

    vertices: (3, V) float32, triangles: (3, F) uint32 with outward winding,
    shape/expression bases: (3V, K) float32 displacement fields, albedo mean
    (V*C,) and basis (V*C, K) float32 with C color channels (1 = grayscale),
    skin_label: (V,) uint8, iris_idx: (2,) uint32 viewer-left/right eye
    centers, landmark_idx: (L,) uint32 (first two entries are the irises).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    shape_basis: np.ndarray
    expr_basis: np.ndarray
    albedo_mean: np.ndarray
    albedo_basis: np.ndarray
    skin_label: np.ndarray
    iris_idx: np.ndarray
    landmark_idx: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float32)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.uint32)
        self.shape_basis = np.ascontiguousarray(self.shape_basis, dtype=np.float32)
        self.expr_basis = np.ascontiguousarray(self.expr_basis, dtype=np.float32)
        self.albedo_mean = np.ascontiguousarray(self.albedo_mean, dtype=np.float32)
        self.albedo_basis = np.ascontiguousarray(self.albedo_basis, dtype=np.float32)
        self.skin_label = np.ascontiguousarray(self.skin_label, dtype=np.uint8)
        self.iris_idx = np.ascontiguousarray(self.iris_idx, dtype=np.uint32)
        self.landmark_idx = np.ascontiguousarray(self.landmark_idx, dtype=np.uint32)
        v = self.num_vertices
        if self.vertices.shape[0] != 3 or self.triangles.shape[0] != 3:
            raise ValueError("vertices and triangles must be 3-row arrays")
        if self.triangles.size and self.triangles.max() >= v:
            raise ValueError("triangle index out of range")
        if self.shape_basis.shape != (3 * v, K_ALPHA):
            raise ValueError(f"shape basis must be (3V, {K_ALPHA})")
        if self.expr_basis.shape != (3 * v, K_BETA):
            raise ValueError(f"expression basis must be (3V, {K_BETA})")
        if self.albedo_mean.shape[0] % v != 0:
            raise ValueError("albedo mean length must be a multiple of V")
        if self.albedo_basis.shape != (self.albedo_mean.shape[0], K_GAMMA):
            raise ValueError(f"albedo basis must be (V*C, {K_GAMMA})")
        if self.skin_label.shape != (v,):
            raise ValueError("skin label must be per-vertex")

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[1]

    @property
    def color_channels(self) -> int:
        return self.albedo_mean.shape[0] // self.num_vertices

    def equal(self, other: "MeshAsset") -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in (
                "vertices", "triangles", "shape_basis", "expr_basis",
                "albedo_mean", "albedo_basis", "skin_label", "iris_idx",
                "landmark_idx",
            )
        )


@dataclass
class RenderOutput:
    """Rasterized mesh image, support mask, depth and projected landmarks.

    image is min-max normalized over the foreground and exactly 0 outside;
    depth is +inf where nothing was drawn.
    """

    image: np.ndarray
    mask: "Mask"  # noqa: F821 - masks imports from here would be circular
    depth: np.ndarray
    landmarks_px: np.ndarray


# ---------------------------------------------------------------------------
# Template construction


def _gauss(u: np.ndarray, center, sigma: float) -> np.ndarray:
    c = np.asarray(center, dtype=np.float64)
    c = c / np.linalg.norm(c)
    d2 = 2.0 * (1.0 - u @ c)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def _build_directions():
    """Unit directions of the lat-long template grid, poles included."""
    theta = np.pi * (np.arange(_N_LAT) + 1) / (_N_LAT + 1)
    phi = 2.0 * np.pi * np.arange(_N_LON) / _N_LON
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    ring = np.stack(
        [np.sin(tt) * np.sin(pp), np.cos(tt), np.sin(tt) * np.cos(pp)], axis=-1
    ).reshape(-1, 3)
    top = np.array([[0.0, 1.0, 0.0]])
    bottom = np.array([[0.0, -1.0, 0.0]])
    return np.concatenate([top, ring, bottom], axis=0)


def _build_triangles(num_vertices: int) -> np.ndarray:
    def ring(i, j):
        return 1 + i * _N_LON + (j % _N_LON)

    tris = []
    for j in range(_N_LON):
        tris.append((0, ring(0, j), ring(0, j + 1)))
    for i in range(_N_LAT - 1):
        for j in range(_N_LON):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j + 1), ring(i + 1, j)
            # Mirror-symmetric diagonal choice keeps renders left-right
            # symmetric for symmetric geometry.
            if j < _N_LON // 2:
                tris.append((a, b, c))
                tris.append((a, c, d))
            else:
                tris.append((b, c, d))
                tris.append((b, d, a))
    last = num_vertices - 1
    for j in range(_N_LON):
        tris.append((last, ring(_N_LAT - 1, j + 1), ring(_N_LAT - 1, j)))
    return np.asarray(tris, dtype=np.uint32).T


def _orient_outward(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v = vertices.T
    t = triangles.T.astype(np.int64)
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    n = np.cross(b - a, c - a)
    centroid = (a + b + c) / 3.0
    flip = np.einsum("ij,ij->i", n, centroid) < 0
    t = t.copy()
    t[flip] = t[flip][:, [0, 2, 1]]
    return t.T.astype(np.uint32)


def _nearest_vertex(u: np.ndarray, direction) -> int:
    c = np.asarray(direction, dtype=np.float64)
    c = c / np.linalg.norm(c)
    return int(np.argmax(u @ c))


@lru_cache(maxsize=1)
def default_asset() -> MeshAsset:
    """Deterministically built toy head asset (~1.5k vertices)."""
    u = _build_directions()
    V = u.shape[0]
    ux, uy, uz = u[:, 0], u[:, 1], u[:, 2]

    relief = (
        0.16 * _gauss(u, (0, -0.10, 1), 0.15)
        - 0.06 * (_gauss(u, (-0.40, 0.28, 0.88), 0.13) + _gauss(u, (0.40, 0.28, 0.88), 0.13))
        - 0.045 * _gauss(u, (0, -0.52, 0.86), 0.13)
        + 0.035 * (_gauss(u, (-0.40, 0.50, 0.80), 0.12) + _gauss(u, (0.40, 0.50, 0.80), 0.12))
        + 0.05 * _gauss(u, (0, -0.90, 0.50), 0.20)
        + 0.03 * (_gauss(u, (-0.62, -0.18, 0.72), 0.18) + _gauss(u, (0.62, -0.18, 0.72), 0.18))
    )
    pos = u * np.asarray(_AXES) * (1.0 + relief)[:, None]
    px, py, pz = pos[:, 0], pos[:, 1], pos[:, 2]

    triangles = _build_triangles(V)
    triangles = _orient_outward(pos.T, triangles)

    def field(dx, dy, dz):
        d = np.zeros((V, 3))
        d[:, 0], d[:, 1], d[:, 2] = dx, dy, dz
        return d.reshape(-1)

    g_nose = _gauss(u, (0, -0.10, 1), 0.18)
    g_eyes = _gauss(u, (-0.40, 0.28, 0.88), 0.12) + _gauss(u, (0.40, 0.28, 0.88), 0.12)
    g_mouth = _gauss(u, (0, -0.52, 0.86), 0.14)
    g_brows = _gauss(u, (-0.40, 0.50, 0.80), 0.12) + _gauss(u, (0.40, 0.50, 0.80), 0.12)
    g_chin = _gauss(u, (0, -0.90, 0.50), 0.35)
    g_cheeks = _gauss(u, (-0.62, -0.18, 0.72), 0.20) + _gauss(u, (0.62, -0.18, 0.72), 0.20)
    g_forehead = _gauss(u, (0, 0.70, 0.72), 0.30)
    g_jaw = _gauss(u, (0, -0.65, 0.70), 0.28)
    g_cor_l = _gauss(u, (-0.30, -0.48, 0.80), 0.12)
    g_cor_r = _gauss(u, (0.30, -0.48, 0.80), 0.12)
    g_philtrum = _gauss(u, (0, -0.30, 0.95), 0.15)
    low = 1.0 / (1.0 + np.exp(8.0 * (uy + 0.2)))

    shape_cols = [
        field(0.09 * px, 0, 0),                      # head width
        field(0, 0.09 * py, 0),                      # head height
        field(0.12 * px * low, 0, 0),                # jaw width
        field(0, -0.10 * g_chin, 0),                 # chin length
        (pos * (0.08 * g_cheeks)[:, None]).reshape(-1),   # cheek fullness
        (pos * (-0.08 * g_forehead)[:, None]).reshape(-1),  # forehead slope
        (pos * (0.08 * g_nose)[:, None]).reshape(-1),       # nose size
        field(0, 0, 0.07 * pz),                      # head depth
    ]
    expr_cols = [
        field(0, -0.09 * g_jaw, 0),                  # jaw open
        field(0.05 * (g_cor_r - g_cor_l), 0.04 * (g_cor_l + g_cor_r), 0),  # smile
        field(0, 0.05 * g_brows, 0),                 # brow raise
        (pos * (-0.04 * g_eyes)[:, None]).reshape(-1),      # eye squeeze
        (pos * (0.05 * g_cheeks)[:, None]).reshape(-1),     # cheek puff
        field(0, 0, 0.06 * g_mouth),                 # pucker
        field(0, -0.05 * (g_cor_l + g_cor_r), 0),    # frown
        field(0, 0.04 * g_philtrum, 0),              # sneer
    ]
    shape_basis = np.stack(shape_cols, axis=1)
    expr_basis = np.stack(expr_cols, axis=1)

    theta = np.arccos(np.clip(uy, -1, 1))
    phi = np.arctan2(ux, uz)
    albedo_mean = (
        0.72 - 0.18 * g_brows - 0.15 * g_mouth - 0.10 * g_eyes + 0.05 * g_cheeks
    )
    albedo_cols = [
        1.0 - albedo_mean,          # exact residual to white; see GAMMA_NEUTRAL
        0.08 * uy,
        0.08 * uz,
        -0.12 * g_mouth,
        -0.12 * g_brows,
        0.06 * np.cos(2 * phi) * np.sin(theta),
        0.06 * (uy * uy - 0.3),
        0.05 * np.sin(3 * theta) * np.cos(phi),
    ]
    albedo_basis = np.stack(albedo_cols, axis=1)

    skin = (uz > 0.15).astype(np.uint8)
    skin[_gauss(u, (-0.40, 0.28, 0.88), 0.13) > 0.5] = 0
    skin[_gauss(u, (0.40, 0.28, 0.88), 0.13) > 0.5] = 0
    skin[g_mouth > 0.55] = 0

    iris_l = _nearest_vertex(u, (-0.40, 0.28, 0.88))
    iris_r = _nearest_vertex(u, (0.40, 0.28, 0.88))
    landmarks = [
        iris_l,
        iris_r,
        _nearest_vertex(u, (0, -0.10, 1)),
        _nearest_vertex(u, (0, -0.52, 0.86)),
        _nearest_vertex(u, (0, -0.95, 0.35)),
        _nearest_vertex(u, (0, 0.70, 0.72)),
        _nearest_vertex(u, (-0.62, -0.18, 0.72)),
        _nearest_vertex(u, (0.62, -0.18, 0.72)),
    ]

    return MeshAsset(
        vertices=pos.T,
        triangles=triangles,
        shape_basis=shape_basis,
        expr_basis=expr_basis,
        albedo_mean=albedo_mean,
        albedo_basis=albedo_basis,
        skin_label=skin,
        iris_idx=np.array([iris_l, iris_r], dtype=np.uint32),
        landmark_idx=np.array(landmarks, dtype=np.uint32),
    )


# ---------------------------------------------------------------------------
# Asset file format (see docs/asset_format.md)

_ASSET_MAGIC = b"SAMA"
_ASSET_VERSION = 1

_ASSET_SECTIONS = (
    "vertices", "triangles", "shape_basis", "expr_basis",
    "albedo_mean", "albedo_basis", "skin_label", "iris_idx", "landmark_idx",
)


def save_asset(asset: MeshAsset, path):
    write_container(
        path, _ASSET_MAGIC, _ASSET_VERSION, {},
        {name: getattr(asset, name) for name in _ASSET_SECTIONS},
    )


def load_asset(path) -> MeshAsset:
    _, sections = read_container(path, _ASSET_MAGIC, _ASSET_VERSION, CorruptAsset)
    missing = set(_ASSET_SECTIONS) - set(sections)
    if missing:
        raise CorruptAsset(f"missing sections: {sorted(missing)}")
    return MeshAsset(**{k: sections[k] for k in _ASSET_SECTIONS})


# ---------------------------------------------------------------------------
# Rendering


def neutralize_albedo(params: MorphableParams) -> MorphableParams:
    """Replace albedo coefficients with the constant-white vector."""
    return replace(params, gamma=GAMMA_NEUTRAL.copy())


def _rotation_matrix(rotation: np.ndarray) -> np.ndarray:
    pitch, yaw, roll = rotation
    cx, sx = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cz, sz = np.cos(roll), np.sin(roll)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _vertex_normals(pos: np.ndarray, tris: np.ndarray) -> np.ndarray:
    t = tris.astype(np.int64)
    a, b, c = pos[t[0]], pos[t[1]], pos[t[2]]
    fn = np.cross(b - a, c - a)
    n = np.zeros_like(pos)
    for k in range(3):
        np.add.at(n, t[k], fn)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return n / norm


def _sh_basis(n: np.ndarray) -> np.ndarray:
    x, y, z = n[:, 0], n[:, 1], n[:, 2]
    return np.stack(
        [
            np.full_like(x, 0.282095),
            0.488603 * y,
            0.488603 * z,
            0.488603 * x,
            1.092548 * x * y,
            1.092548 * y * z,
            0.315392 * (3 * z * z - 1),
            1.092548 * x * z,
            0.546274 * (x * x - y * y),
        ],
        axis=1,
    )


def deform_vertices(asset: MeshAsset, params: MorphableParams) -> np.ndarray:
    """Model-space vertex positions (V, 3) for the given coefficients."""
    disp = asset.shape_basis.astype(np.float64) @ params.alpha
    disp += asset.expr_basis.astype(np.float64) @ params.beta
    return asset.vertices.T.astype(np.float64) + disp.reshape(-1, 3)


def vertex_albedo(asset: MeshAsset, params: MorphableParams) -> np.ndarray:
    """Per-vertex albedo (V,) for grayscale assets, clipped to >= 0."""
    alb = asset.albedo_mean.astype(np.float64) + asset.albedo_basis.astype(np.float64) @ params.gamma
    return np.maximum(alb, 0.0)


def _project(asset, params, resolution):
    pos = deform_vertices(asset, params)
    rot = _rotation_matrix(params.rotation)
    cam = pos @ rot.T
    f = BASE_FACE_RADIUS_FRAC * resolution * (1.0 + 0.1 * params.scale)
    half = resolution / 2.0
    sx = half * (1.0 + params.t_xy[0]) + f * cam[:, 0]
    sy = half * (1.0 + params.t_xy[1]) - f * cam[:, 1]
    return pos, cam, np.stack([sx, sy], axis=1)


def _rasterize(screen: np.ndarray, depth_v: np.ndarray, values: np.ndarray | None,
               tris: np.ndarray, resolution: int):
    """Z-buffered scanline-free rasterization of per-vertex values.

    values: (V, A) attributes interpolated with screen barycentrics, or None
    for a coverage-only pass. Returns (attr image (H, W, A) or None, depth
    image, coverage bool image) and raises DegenerateMesh when every
    projected triangle has zero area.
    """
    H = W = resolution
    attr = None if values is None else np.zeros((H, W, values.shape[1]), dtype=np.float64)
    zbuf = np.full((H, W), np.inf, dtype=np.float64)
    cov = np.zeros((H, W), dtype=bool)

    t = tris.astype(np.int64).T
    ax, ay = screen[t[:, 0], 0], screen[t[:, 0], 1]
    bx, by = screen[t[:, 1], 0], screen[t[:, 1], 1]
    cx, cy = screen[t[:, 2], 0], screen[t[:, 2], 1]
    area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if not np.any(area2 != 0.0):
        raise DegenerateMesh("all projected triangles have zero area")

    # Outward winding projects to negative area2 when front-facing (the y
    # flip inverts orientation); keep only those and swap b/c to positive.
    front = np.nonzero(area2 < 0.0)[0]
    xs = np.stack([ax, cx, bx], axis=1)
    ys = np.stack([ay, cy, by], axis=1)
    vidx = t[:, [0, 2, 1]]
    area2 = -area2

    # Edge e runs v_e -> v_{e+1}; E_e(p) = dx_e*(py - y_e) - dy_e*(px - x_e)
    # is the (unnormalized) barycentric weight of vertex e+2.
    dx = np.roll(xs, -1, axis=1) - xs
    dy = np.roll(ys, -1, axis=1) - ys
    coef_c = -dx * ys + dy * xs          # E = dy*px_neg... folded constant
    top_left = (dy < 0) | ((dy == 0) & (dx > 0))

    xmin = np.maximum(np.floor(xs.min(axis=1) - 0.5).astype(np.int64), 0)
    xmax = np.minimum(np.ceil(xs.max(axis=1) + 0.5).astype(np.int64), W)
    ymin = np.maximum(np.floor(ys.min(axis=1) - 0.5).astype(np.int64), 0)
    ymax = np.minimum(np.ceil(ys.max(axis=1) + 0.5).astype(np.int64), H)

    centers = np.arange(max(H, W), dtype=np.float64) + 0.5
    wshift = np.array([2, 0, 1])  # weight slot of each edge's opposite vertex

    for k in front:
        x0, x1, y0, y1 = xmin[k], xmax[k], ymin[k], ymax[k]
        if x0 >= x1 or y0 >= y1:
            continue
        px = centers[x0:x1][None, None, :]
        py = centers[y0:y1][None, :, None]
        e = (dx[k, :, None, None] * py - dy[k, :, None, None] * px
             + coef_c[k, :, None, None])
        inside = ((e > 0) | ((e == 0) & top_left[k][:, None, None])).all(axis=0)
        if not inside.any():
            continue
        if values is None:
            cov[y0:y1, x0:x1] |= inside
            continue
        w = e[wshift] / area2[k]
        d = depth_v[vidx[k]]
        z = w[0] * d[0] + w[1] * d[1] + w[2] * d[2]
        sub = zbuf[y0:y1, x0:x1]
        upd = inside & (z < sub)
        if not upd.any():
            continue
        sub[upd] = z[upd]
        cov[y0:y1, x0:x1][upd] = True
        vals = values[vidx[k]]
        interp = np.tensordot(w, vals, axes=(0, 0))
        attr[y0:y1, x0:x1][upd] = interp[upd]
    return attr, zbuf, cov


def render(asset: MeshAsset, params: MorphableParams, resolution: int) -> RenderOutput:
    """Shaded orthographic rasterization of the parameterized mesh.

    Shading is per-vertex albedo times clamped SH irradiance, interpolated
    with screen barycentrics; the foreground is min-max normalized so the
    output carries illumination structure but no global gain.
    """
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    pos, cam, screen = _project(asset, params, resolution)
    rot = _rotation_matrix(params.rotation)
    normals = _vertex_normals(pos, asset.triangles) @ rot.T
    irradiance = np.maximum(_sh_basis(normals) @ params.delta, 0.0)
    shade = vertex_albedo(asset, params) * irradiance

    attr, zbuf, cov = _rasterize(
        screen, -cam[:, 2], shade[:, None], asset.triangles, resolution
    )
    img = attr[:, :, 0]
    fg = img[cov]
    if fg.size:
        span = fg.max() - fg.min()
        if span < 1e-12:
            img[cov] = 0.0
        else:
            img[cov] = (fg - fg.min()) / span
    img = np.clip(img, 0.0, 1.0)

    from .masks import Mask  # local import, masks depends on this module

    lm = screen[asset.landmark_idx.astype(np.int64)]
    return RenderOutput(
        image=img.astype(np.float32),
        mask=Mask(cov.astype(np.uint8)),
        depth=zbuf.astype(np.float32),
        landmarks_px=lm,
    )


def derive_mesh_mask(render_output: RenderOutput):
    """Foreground support of a render: exactly the drawn pixels."""
    return render_output.mask


def render_mask(asset: MeshAsset, params: MorphableParams, resolution: int):
    """Coverage support only; identical to render(...).mask but cheaper."""
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    _, cam, screen = _project(asset, params, resolution)
    _, _, cov = _rasterize(screen, -cam[:, 2], None, asset.triangles, resolution)
    from .masks import Mask

    return Mask(cov.astype(np.uint8))


def project_vertex_scalar(asset: MeshAsset, params: MorphableParams,
                          resolution: int, values: np.ndarray) -> np.ndarray:
    """Rasterize an arbitrary per-vertex scalar; 0 where nothing is drawn."""
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    _, cam, screen = _project(asset, params, resolution)
    attr, _, cov = _rasterize(
        screen, -cam[:, 2], np.asarray(values, dtype=np.float64)[:, None],
        asset.triangles, resolution,
    )
    out = attr[:, :, 0]
    out[~cov] = 0.0
    return out


def lookup_params(record) -> MorphableParams:
    """Ground-truth parameters stored alongside a dataset record."""
    if record.params is None:
        raise MissingSidecar(f"record {record.id_tag!r} has no parameter sidecar")
    return record.params
