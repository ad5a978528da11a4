"""Training objectives: reconstruction, identity, and keypoint-paired GAN.

The adversarial objective is the non-saturating logistic GAN, written with
softplus for numerical stability:

    L_D = E[softplus(-D(real))] + E[softplus(D(fake))]
    L_G = E[softplus(-D(fake))]

Discriminator samples are images channel-concatenated with a keypoint image;
the real pair uses the image's own keypoints, fake pairs swap in perturbed
keypoints or the generated image.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeMismatch


@dataclass
class LossWeights:
    lambda_rec: float = 1.0
    lambda_id: float = 1.0
    lambda_gan: float = 1.0

    def __post_init__(self):
        for name in ("lambda_rec", "lambda_id", "lambda_gan"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


class PerceptualPyramid(nn.Module):
    """Frozen random conv pyramid defining a 3-scale feature distance.

    A seed-fixed random feature stack is a valid (if weak) perceptual metric
    for overfit-style tests; a pretrained extractor with the same interface
    can be plugged in instead.
    """

    def __init__(self, in_channels: int = 1, widths=(12, 24, 48), seed: int = 303):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        stages = []
        prev = in_channels
        for w in widths:
            conv = nn.Conv2d(prev, w, 3, padding=1)
            nn.init.kaiming_normal_(conv.weight, generator=gen)
            nn.init.zeros_(conv.bias)
            stages.append(conv)
            prev = w
        self.stages = nn.ModuleList(stages)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = x
        for i, conv in enumerate(self.stages):
            if i > 0:
                h = F.avg_pool2d(h, 2)
            h = F.relu(conv(h))
            feats.append(h)
        return feats


def l1_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"{tuple(pred.shape)} vs {tuple(gt.shape)}")
    return (pred - gt).abs().mean()


def perceptual_distance(pred: torch.Tensor, gt: torch.Tensor,
                        feature_net: PerceptualPyramid) -> torch.Tensor:
    fp, fg = feature_net(pred), feature_net(gt)
    return sum((a - b).abs().mean() for a, b in zip(fp, fg))


def recon_loss(pred: torch.Tensor, gt: torch.Tensor,
               feature_net: PerceptualPyramid) -> torch.Tensor:
    """Mean absolute error plus the 3-scale feature distance."""
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"{tuple(pred.shape)} vs {tuple(gt.shape)}")
    return l1_loss(pred, gt) + perceptual_distance(pred, gt, feature_net)


def identity_loss(pred: torch.Tensor, gt: torch.Tensor, encoder) -> torch.Tensor:
    """1 - cosine similarity of frozen identity embeddings; in [0, 2].

    No color jitter here: jitter is a data-path augmentation only.
    """
    e_pred = encoder(pred)
    e_gt = encoder(gt)
    cos = F.cosine_similarity(e_pred, e_gt, dim=1, eps=1e-12)
    return (1.0 - cos).mean()


def gan_loss_d(real_pairs: torch.Tensor, fake_pairs: torch.Tensor,
               discriminator) -> torch.Tensor:
    """Discriminator objective; inputs are detached so only D receives grads."""
    real_logits = discriminator(real_pairs.detach())
    fake_logits = discriminator(fake_pairs.detach())
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def gan_loss_g(fake_pairs: torch.Tensor, discriminator) -> torch.Tensor:
    """Generator-side objective.

    Discriminator parameters are frozen for the duration of the call, so the
    loss carries no gradient into D while gradients still flow to the fakes.
    """
    d_params = [p for p in discriminator.parameters() if p.requires_grad]
    for p in d_params:
        p.requires_grad_(False)
    try:
        logits = discriminator(fake_pairs)
        return F.softplus(-logits).mean()
    finally:
        for p in d_params:
            p.requires_grad_(True)


def build_discriminator_pairs(real_image: torch.Tensor, gen_image: torch.Tensor,
                              kp_real: torch.Tensor, kp_perturbed: torch.Tensor,
                              pair_generated_with_perturbed: bool = False):
    """Keypoint-paired discriminator samples.

    Real: the image with its own keypoint rendering. Fake: the image with
    perturbed keypoints, and the generated image with the real keypoints
    (or perturbed ones when the switch is set).
    Returns (real_pairs (B, C+1, H, W), fake_pairs (2B, C+1, H, W)).
    """
    for t in (gen_image, kp_real, kp_perturbed):
        if t.shape[0] != real_image.shape[0] or t.shape[2:] != real_image.shape[2:]:
            raise ShapeMismatch("all pair inputs must share batch and spatial size")
    real = torch.cat([real_image, kp_real], dim=1)
    fake_kp = torch.cat([real_image, kp_perturbed], dim=1)
    gen_kp = kp_perturbed if pair_generated_with_perturbed else kp_real
    fake_gen = torch.cat([gen_image, gen_kp], dim=1)
    return real, torch.cat([fake_kp, fake_gen], dim=0)


def total_loss(parts, weights: LossWeights) -> torch.Tensor:
    """Weighted sum of {"rec", "id", "gan"} loss parts."""
    return (
        weights.lambda_rec * parts["rec"]
        + weights.lambda_id * parts["id"]
        + weights.lambda_gan * parts["gan"]
    )


class _DiscResBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cin, 3, padding=1)
        self.conv2 = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1, stride=2, bias=False)

    def forward(self, x):
        h = F.leaky_relu(self.conv1(x), 0.2)
        h = F.leaky_relu(self.conv2(h), 0.2)
        return (h + self.skip(x)) * (0.5 ** 0.5)


class Discriminator(nn.Module):
    """Residual downsampling critic over image+keypoint channel stacks."""

    def __init__(self, in_channels: int = 2, base_width: int = 32,
                 widths=(32, 64, 64)):
        super().__init__()
        self.stem = nn.Conv2d(in_channels, base_width, 3, padding=1)
        blocks = []
        prev = base_width
        for w in widths:
            blocks.append(_DiscResBlock(prev, w))
            prev = w
        self.blocks = nn.Sequential(*blocks)
        self.final_conv = nn.Conv2d(prev, prev, 3, padding=1)
        self.head = nn.Linear(prev, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.leaky_relu(self.stem(x), 0.2)
        h = self.blocks(h)
        h = F.leaky_relu(self.final_conv(h), 0.2)
        return self.head(h.mean(dim=(2, 3))).squeeze(1)
