"""Per-pixel Gaussian depth head.

Two parallel 3x3 convolutions on the backbone's 64x32x32 feature map predict
the depth mean and (via a log-variance head) the strictly positive standard
deviation of every pixel. Training samples a depth map with the
reparameterization d = mu + eps * sigma and regularizes (mu, sigma) toward a
unit-variance Gaussian centered on the ground-truth depth; inference uses mu
alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import Tensor, nn

from . import backbones
from .data import save_depth, save_image
from .errors import NumericError, ValidationError


@dataclass
class UncertainDepth:
    """Predicted depth distribution: per-pixel mean and stddev grids."""

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise ValueError(f"mu/sigma shape mismatch: {self.mu.shape} vs {self.sigma.shape}")


class DepthUncertaintyHead(nn.Module):
    """Two independent 3x3 conv heads: one for the mean, one for the log-variance."""

    def __init__(self, in_channels: int = backbones.FEATURE_CHANNELS):
        super().__init__()
        self.conv_mu = nn.Conv2d(in_channels, 1, 3, 1, 1)
        self.conv_logvar = nn.Conv2d(in_channels, 1, 3, 1, 1)

    def forward(self, features: Tensor) -> UncertainDepth:
        mu = self.conv_mu(features).squeeze(-3)
        logvar = self.conv_logvar(features).squeeze(-3)
        if not (torch.isfinite(mu).all() and torch.isfinite(logvar).all()):
            raise NumericError("non-finite activations in depth uncertainty head")
        return UncertainDepth(mu, torch.exp(0.5 * logvar))


class DepthUncertaintyModel(nn.Module):
    """A depth feature extractor with the uncertainty head on top."""

    def __init__(self, spec: backbones.BackboneSpec):
        super().__init__()
        self.spec = spec
        self.backbone = backbones.build_backbone(spec)
        self.head = DepthUncertaintyHead()

    def forward(self, image: Tensor) -> UncertainDepth:
        single = image.dim() == 3
        x = image.unsqueeze(0) if single else image
        ud = self.head(self.backbone(x))
        if single:
            return UncertainDepth(ud.mu.squeeze(0), ud.sigma.squeeze(0))
        return ud


def sample_depth(ud: UncertainDepth, noise: Tensor) -> Tensor:
    """Training-time depth sample d = mu + noise * sigma (unclamped)."""
    if noise.shape != ud.mu.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != depth shape {tuple(ud.mu.shape)}")
    return ud.mu + noise * ud.sigma


def depth_kl_loss(ud: UncertainDepth, gt: Tensor) -> Tensor:
    """Mean over pixels of the closed-form KL from N(mu, sigma^2) to N(gt, 1)."""
    if gt.shape != ud.mu.shape:
        raise ValueError(f"gt shape {tuple(gt.shape)} != depth shape {tuple(ud.mu.shape)}")
    if (ud.sigma <= 0).any():
        raise ValueError("sigma must be strictly positive")
    var = ud.sigma**2
    return (0.5 * ((ud.mu - gt) ** 2 + var - 1.0 - torch.log(var))).mean()


def infer_depth(ud: UncertainDepth) -> Tensor:
    """Inference-time depth map: the mean grid; sigma is ignored."""
    return ud.mu


def export_sigma_heatmap(
    sigma: Tensor | np.ndarray,
    png_path: Path | str | None = None,
    txt_path: Path | str | None = None,
) -> None:
    """Write a 32x32 sigma grid as a grayscale image (scaled by its max so the
    hottest pixel is white) and/or as the textual depth-file format."""
    grid = sigma.detach().cpu().numpy() if isinstance(sigma, Tensor) else np.asarray(sigma)
    grid = grid.astype(np.float32)
    if grid.ndim != 2:
        raise ValidationError(f"expected a 2-D sigma grid, got shape {grid.shape}")
    if png_path is not None:
        peak = float(grid.max())
        vis = grid / peak if peak > 0 else grid
        save_image(np.repeat(vis[None], 3, axis=0), png_path)
    if txt_path is not None:
        np.savetxt(txt_path, grid, fmt="%.8f")


def save_fas_model(model: DepthUncertaintyModel, path: Path | str, config_snapshot: str | None = None) -> None:
    torch.save(
        {
            "format_version": 1,
            "kind": "fas",
            "backbone_kind": model.spec.kind,
            "cdc_theta": model.spec.cdc_theta,
            "width": model.spec.width,
            "state_dict": model.state_dict(),
            "config_snapshot": config_snapshot,
        },
        path,
    )


def load_fas_model(path: Path | str) -> DepthUncertaintyModel:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("kind") != "fas":
        raise ValidationError(f"{path} is not a depth-model checkpoint")
    spec = backbones.BackboneSpec(
        kind=blob["backbone_kind"], cdc_theta=blob["cdc_theta"], width=blob["width"]
    )
    model = DepthUncertaintyModel(spec)
    model.load_state_dict(blob["state_dict"])
    return model.eval()
