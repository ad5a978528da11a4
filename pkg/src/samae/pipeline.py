"""Training and inference pipeline.

Training is plain self-reconstruction: every sample is rebuilt from its own
decomposed components (neutral-albedo mesh render, masked background image,
identity/skin vectors, iris stickmen), with perforation confusion and random
mesh scaling keeping the mask and mesh scale uninformative about the true
facial contour. Inference swaps the identity-bearing components of a source
record into a target record; it never randomizes the mesh scale.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .conditioning import (
    IdentityEncoder,
    SkinEncoder,
    encode_identity,
    encode_skin,
    render_iris_stickmen,
    perturb_keypoints,
    skin_masked_input,
    ID_DIM,
)
from .container import read_container, write_container
from .data import DatasetRecord, alpha_pool_from_records
from .errors import CorruptCheckpoint, NonFiniteLoss
from .generator import GeneratorConfig, GeneratorInput, UNetGenerator
from .losses import (
    Discriminator,
    LossWeights,
    PerceptualPyramid,
    build_discriminator_pairs,
    gan_loss_d,
    gan_loss_g,
    identity_loss,
    l1_loss,
    perceptual_distance,
    total_loss,
)
from .masks import final_mask_basic, masked_image, perforation_confusion_train, perforation_mask_infer
from .morphable import (
    MeshAsset,
    MorphableParams,
    default_asset,
    derive_mesh_mask,
    lookup_params,
    neutralize_albedo,
    render,
)

SEED_ENV_VAR = "SAMAE_SEED"


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 8
    max_steps: int = 500_000
    seed: int = 0
    lambda_rec: float = 1.0
    lambda_id: float = 1.0
    lambda_gan: float = 1.0
    resolution: int = 256
    arch_preset: str = "full"
    perforation_confusion: bool = True
    random_mesh_scaling: bool = True
    skin_condition: bool = True
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    skin_dim: int = 64
    jitter_brightness: float = 0.3
    jitter_contrast: float = 0.3
    jitter_hue: float = 0.1
    kp_sigma_frac: float = 0.05
    kp_radius: float = 3.0
    r1_gamma: float = 0.0
    pair_generated_with_perturbed_kp: bool = False
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_rec, self.lambda_id, self.lambda_gan)

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        base = dict(resolution=64, batch_size=4, arch_preset="toy", max_steps=2000)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def ablation(cls, name: str, **overrides) -> "TrainConfig":
        """The four flag configurations: B, B+P, B+P+R, B+P+R+S."""
        flags = {
            "B": (False, False, False),
            "B+P": (True, False, False),
            "B+P+R": (True, True, False),
            "B+P+R+S": (True, True, True),
        }
        if name not in flags:
            raise ValueError(f"unknown ablation row {name!r}")
        p, r, s = flags[name]
        return cls.toy(perforation_confusion=p, random_mesh_scaling=r,
                       skin_condition=s, **overrides)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def load_train_config(path) -> TrainConfig:
    """Read a JSON config; the SAMAE_SEED env var overrides the seed."""
    data = json.loads(Path(path).read_text())
    if SEED_ENV_VAR in os.environ:
        data["seed"] = int(os.environ[SEED_ENV_VAR])
    return TrainConfig.from_dict(data)


@dataclass
class SwapRequest:
    source: DatasetRecord
    target: DatasetRecord


def random_mesh_scale(params: MorphableParams, rng: np.random.Generator,
                      enabled: bool = True) -> MorphableParams:
    """Substitute the scale with a U(-4, 1) draw during training.

    Instrumented: every call bumps `random_mesh_scale.calls` so tests can
    assert the inference path stays clear of it.
    """
    random_mesh_scale.calls += 1
    if not enabled:
        return params
    return replace(params, scale=float(rng.uniform(-4.0, 1.0)))


random_mesh_scale.calls = 0


def compose_swap_params(source: MorphableParams, target: MorphableParams) -> MorphableParams:
    """Swap tuple: shape from the source, everything else from the target,
    albedo neutralized."""
    swapped = MorphableParams(
        alpha=source.alpha.copy(),
        beta=target.beta.copy(),
        gamma=target.gamma.copy(),
        delta=target.delta.copy(),
        rotation=target.rotation.copy(),
        t_xy=target.t_xy.copy(),
        scale=target.scale,
    )
    return neutralize_albedo(swapped)


@dataclass
class TrainState:
    config: TrainConfig
    asset: MeshAsset
    alpha_pool: np.ndarray
    generator: UNetGenerator
    discriminator: Discriminator
    id_encoder: IdentityEncoder
    skin_encoder: SkinEncoder
    perceptual: PerceptualPyramid
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: np.random.Generator
    step: int = 0


def init_state(config: TrainConfig, records=None, asset: MeshAsset | None = None,
               alpha_pool: np.ndarray | None = None) -> TrainState:
    """Fresh training state; weights derive deterministically from the seed."""
    asset = asset or default_asset()
    if alpha_pool is None:
        if records is None:
            raise ValueError("need records or an explicit alpha_pool")
        alpha_pool = alpha_pool_from_records(records)
    torch.manual_seed(config.seed)
    gen_cfg = GeneratorConfig.preset(config.arch_preset,
                                     resolution=config.resolution,
                                     cond_dim=ID_DIM + config.skin_dim)
    generator = UNetGenerator(gen_cfg)
    discriminator = Discriminator(in_channels=2)
    id_encoder = IdentityEncoder()
    skin_encoder = SkinEncoder(dim=config.skin_dim)
    perceptual = PerceptualPyramid()
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = torch.optim.Adam(
        list(generator.parameters()) + list(skin_encoder.parameters()),
        lr=config.learning_rate, betas=betas,
    )
    opt_d = torch.optim.Adam(discriminator.parameters(),
                             lr=config.learning_rate, betas=betas)
    return TrainState(
        config=config, asset=asset, alpha_pool=np.asarray(alpha_pool, dtype=np.float64),
        generator=generator, discriminator=discriminator, id_encoder=id_encoder,
        skin_encoder=skin_encoder, perceptual=perceptual,
        opt_g=opt_g, opt_d=opt_d, rng=np.random.default_rng(config.seed),
    )


def build_train_sample(record: DatasetRecord, config: TrainConfig,
                       rng: np.random.Generator, *, asset: MeshAsset,
                       alpha_pool: np.ndarray, id_encoder: IdentityEncoder,
                       skin_encoder: SkinEncoder):
    """One self-reconstruction sample: (GeneratorInput, ground truth, aux).

    aux carries the intermediate artifacts (masks, drawn parameters, skin
    encoder input) for instrumentation and for rebuilding the skin vector
    in-graph during training.
    """
    res = config.resolution
    params = neutralize_albedo(lookup_params(record))
    params = random_mesh_scale(params, rng, enabled=config.random_mesh_scaling)
    out = render(asset, params, res)
    m_ras = derive_mesh_mask(out)

    v_rand = None
    if config.perforation_confusion:
        m, v_rand = perforation_confusion_train(
            m_ras, record.occlusion_mask, asset, params, alpha_pool, rng
        )
    else:
        m = final_mask_basic(m_ras, record.occlusion_mask)

    image_pm1 = record.image.astype(np.float32) * 2.0 - 1.0
    i_p = masked_image(image_pm1, m)

    c_id = encode_identity(record.image, id_encoder, rng, jitter=True,
                           brightness=config.jitter_brightness,
                           contrast=config.jitter_contrast,
                           hue=config.jitter_hue)
    if config.skin_condition:
        c_skin = encode_skin(record.image, record.skin_mask, skin_encoder)
        skin_image = skin_masked_input(record.image, record.skin_mask)
    else:
        c_skin = np.zeros(config.skin_dim)
        skin_image = None
    kp_image = render_iris_stickmen(record.iris, res, radius=config.kp_radius)

    spatial = np.stack([out.image, i_p, kp_image], axis=0).astype(np.float32)
    vector = np.concatenate([c_id, c_skin]).astype(np.float32)
    gi = GeneratorInput(
        spatial=torch.from_numpy(spatial[None]),
        vector=torch.from_numpy(vector[None]),
    )
    gt = torch.from_numpy(image_pm1[None, None])
    aux = {
        "mask": m,
        "m_ras": m_ras,
        "v_rand": v_rand,
        "render_params": params,
        "c_id": c_id,
        "c_skin": c_skin,
        "skin_image": skin_image,
        "kp_image": kp_image,
    }
    return gi, gt, aux


def _assemble_batch(state: TrainState, records):
    cfg = state.config
    gis, gts, auxes = [], [], []
    for rec in records:
        gi, gt, aux = build_train_sample(
            rec, cfg, state.rng, asset=state.asset, alpha_pool=state.alpha_pool,
            id_encoder=state.id_encoder, skin_encoder=state.skin_encoder,
        )
        gis.append(gi)
        gts.append(gt)
        auxes.append(aux)
    spatial = torch.cat([g.spatial for g in gis], dim=0)
    vector = torch.cat([g.vector for g in gis], dim=0)
    gt = torch.cat(gts, dim=0)

    kp_real = spatial[:, 2:3]
    kp_pert = []
    for rec in records:
        pk = perturb_keypoints(rec.iris, state.rng, cfg.resolution,
                               sigma=cfg.kp_sigma_frac * cfg.resolution)
        kp_pert.append(render_iris_stickmen(pk, cfg.resolution, radius=cfg.kp_radius))
    kp_pert = torch.from_numpy(np.stack(kp_pert)[:, None].astype(np.float32))
    return GeneratorInput(spatial=spatial, vector=vector), gt, auxes, kp_real, kp_pert


def _in_graph_vector(state: TrainState, gi: GeneratorInput, auxes):
    """Condition vector with the skin half recomputed through the live encoder."""
    if not state.config.skin_condition:
        return gi.vector
    skin_in = torch.from_numpy(
        np.stack([a["skin_image"] for a in auxes])[:, None].astype(np.float32)
    )
    c_skin = state.skin_encoder(skin_in * 2.0 - 1.0)
    return torch.cat([gi.vector[:, :ID_DIM], c_skin], dim=1)


def discriminator_step(state: TrainState, real_pairs, fake_pairs) -> float:
    d_loss = gan_loss_d(real_pairs, fake_pairs, state.discriminator)
    if state.config.r1_gamma > 0:
        real = real_pairs.detach().requires_grad_(True)
        logits = state.discriminator(real)
        (grad,) = torch.autograd.grad(logits.sum(), real, create_graph=True)
        d_loss = d_loss + 0.5 * state.config.r1_gamma * grad.pow(2).sum(dim=(1, 2, 3)).mean()
    state.opt_d.zero_grad()
    d_loss.backward()
    state.opt_d.step()
    return float(d_loss.detach())


def generator_step(state: TrainState, pred, gt, gen_fake_pairs):
    cfg = state.config
    l1 = l1_loss(pred, gt)
    perc = perceptual_distance(pred, gt, state.perceptual)
    idl = identity_loss(pred, gt, state.id_encoder)
    gan_g = gan_loss_g(gen_fake_pairs, state.discriminator)
    total = total_loss({"rec": l1 + perc, "id": idl, "gan": gan_g}, cfg.loss_weights)
    state.opt_g.zero_grad()
    total.backward()
    state.opt_g.step()
    return {
        "l1": float(l1.detach()),
        "perc": float(perc.detach()),
        "id": float(idl.detach()),
        "gan_g": float(gan_g.detach()),
    }


def train_step(state: TrainState, records) -> dict:
    """One alternating update: discriminator first, then generator+skin encoder."""
    cfg = state.config
    gi, gt, auxes, kp_real, kp_pert = _assemble_batch(state, records)
    vector = _in_graph_vector(state, gi, auxes)
    pred = state.generator.generate(GeneratorInput(spatial=gi.spatial, vector=vector))

    real_pairs, fake_pairs = build_discriminator_pairs(
        gt, pred, kp_real, kp_pert,
        pair_generated_with_perturbed=cfg.pair_generated_with_perturbed_kp,
    )
    gan_d = discriminator_step(state, real_pairs, fake_pairs)
    # Second half of the fake stack is the generated-image pairs.
    batch = gt.shape[0]
    metrics = generator_step(state, pred, gt, fake_pairs[batch:])
    metrics["gan_d"] = gan_d

    bad = {k: v for k, v in metrics.items() if not np.isfinite(v)}
    if bad:
        raise NonFiniteLoss(f"non-finite losses at step {state.step}: {bad} "
                            f"(all metrics: {metrics})")
    state.step += 1
    return metrics


def train(state: TrainState, records, out_dir=None, log_every: int = 50) -> list[dict]:
    """Run the configured number of steps; returns the metric trace."""
    cfg = state.config
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    history = []
    log_fh = (out_dir / "metrics.jsonl").open("a") if out_dir is not None else None
    try:
        while state.step < cfg.max_steps:
            idx = state.rng.integers(0, len(records), size=cfg.batch_size)
            batch = [records[int(i)] for i in idx]
            try:
                metrics = train_step(state, batch)
            except NonFiniteLoss:
                if out_dir is not None:
                    dump = {"step": state.step, "history_tail": history[-10:]}
                    (out_dir / "nonfinite_dump.json").write_text(json.dumps(dump, indent=1))
                raise
            metrics["step"] = state.step
            history.append(metrics)
            if log_fh is not None:
                log_fh.write(json.dumps(metrics) + "\n")
            if log_fh is not None and state.step % log_every == 0:
                log_fh.flush()
            if out_dir is not None and cfg.checkpoint_every > 0 and \
                    state.step % cfg.checkpoint_every == 0:
                save_checkpoint(state, out_dir / f"ckpt_{state.step:07d}.samc")
        if out_dir is not None:
            save_checkpoint(state, out_dir / "ckpt_final.samc")
    finally:
        if log_fh is not None:
            log_fh.close()
    return history


def swap(request: SwapRequest, state: TrainState) -> np.ndarray:
    """Cross-identity inference; returns the swapped image in [0, 1].

    Shape comes from the source, posture/lighting/scale from the target,
    identity vector from the source (no jitter), skin vector and keypoints
    from the target. The mask unions both mesh silhouettes before cutting
    occlusions, mirroring the training-time perforation.
    """
    cfg = state.config
    res = cfg.resolution
    src, tgt = request.source, request.target
    v_swap = compose_swap_params(lookup_params(src), lookup_params(tgt))
    out_swap = render(state.asset, v_swap, res)
    m_ras_swap = derive_mesh_mask(out_swap)
    out_tgt = render(state.asset, neutralize_albedo(lookup_params(tgt)), res)
    m_ras_tgt = derive_mesh_mask(out_tgt)
    m = perforation_mask_infer(m_ras_tgt, m_ras_swap, tgt.occlusion_mask)

    image_pm1 = tgt.image.astype(np.float32) * 2.0 - 1.0
    i_p = masked_image(image_pm1, m)
    c_id = encode_identity(src.image, state.id_encoder, jitter=False)
    if cfg.skin_condition:
        c_skin = encode_skin(tgt.image, tgt.skin_mask, state.skin_encoder)
    else:
        c_skin = np.zeros(cfg.skin_dim)
    kp_image = render_iris_stickmen(tgt.iris, res, radius=cfg.kp_radius)

    spatial = np.stack([out_swap.image, i_p, kp_image], axis=0).astype(np.float32)
    vector = np.concatenate([c_id, c_skin]).astype(np.float32)
    gi = GeneratorInput(spatial=torch.from_numpy(spatial[None]),
                        vector=torch.from_numpy(vector[None]))
    with torch.no_grad():
        pred = state.generator.generate(gi)
    return ((pred[0, 0].numpy() + 1.0) / 2.0).clip(0.0, 1.0)


# ---------------------------------------------------------------------------
# Checkpoints (see docs/checkpoint_format.md)

_CKPT_MAGIC = b"SAMC"
_CKPT_VERSION = 1

_MODULES = ("generator", "discriminator", "id_encoder", "skin_encoder", "perceptual")
_ASSET_FIELDS = ("vertices", "triangles", "shape_basis", "expr_basis",
                 "albedo_mean", "albedo_basis", "skin_label", "iris_idx",
                 "landmark_idx")


def _optimizer_arrays(prefix: str, opt: torch.optim.Adam, arrays: dict) -> list:
    sd = opt.state_dict()
    for idx, st in sd["state"].items():
        for key, val in st.items():
            arrays[f"{prefix}/{idx}/{key}"] = val.detach().cpu().numpy()
    return sd["param_groups"]


def _load_optimizer(prefix: str, opt: torch.optim.Adam, arrays: dict, groups):
    st = {}
    for name, arr in arrays.items():
        if not name.startswith(prefix + "/"):
            continue
        _, idx, key = name.split("/", 2)
        st.setdefault(int(idx), {})[key] = torch.from_numpy(np.array(arr))
    opt.load_state_dict({"state": st, "param_groups": groups})


def save_checkpoint(state: TrainState, path):
    arrays: dict[str, np.ndarray] = {}
    for mod_name in _MODULES:
        sd = getattr(state, mod_name).state_dict()
        for key, val in sd.items():
            arrays[f"{mod_name}.{key}"] = val.detach().cpu().numpy()
    for f in _ASSET_FIELDS:
        arrays[f"asset.{f}"] = getattr(state.asset, f)
    arrays["alpha_pool"] = state.alpha_pool
    meta = {
        "config": state.config.to_dict(),
        "step": state.step,
        "rng_state": state.rng.bit_generator.state,
        "opt_g_groups": _optimizer_arrays("opt_g", state.opt_g, arrays),
        "opt_d_groups": _optimizer_arrays("opt_d", state.opt_d, arrays),
    }
    write_container(path, _CKPT_MAGIC, _CKPT_VERSION, meta, arrays)


def load_checkpoint(path) -> TrainState:
    meta, arrays = read_container(path, _CKPT_MAGIC, _CKPT_VERSION, CorruptCheckpoint)
    config = TrainConfig.from_dict(meta["config"])
    asset = MeshAsset(**{f: arrays[f"asset.{f}"] for f in _ASSET_FIELDS})
    state = init_state(config, asset=asset, alpha_pool=arrays["alpha_pool"])
    for mod_name in _MODULES:
        module = getattr(state, mod_name)
        prefix = mod_name + "."
        sd = {
            name[len(prefix):]: torch.from_numpy(np.array(arr))
            for name, arr in arrays.items()
            if name.startswith(prefix) and not name.startswith(("opt_g/", "opt_d/"))
        }
        module.load_state_dict(sd)
    _load_optimizer("opt_g", state.opt_g, arrays, meta["opt_g_groups"])
    _load_optimizer("opt_d", state.opt_d, arrays, meta["opt_d_groups"])
    state.step = meta["step"]
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    state.rng = rng
    return state
