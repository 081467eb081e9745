"""Depth-supervised anti-spoofing training on mixed real/generated batches.

Each batch holds round(r * B) real samples and B - round(r * B) generated
ones (both shares at least 1 when 0 < r < 1). The objective is the real
depth-regression loss plus lambda_g times the same loss over the generated
share: L = MSE + lambda_kl * KL + lambda_g * (MSE' + lambda_kl * KL').
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from .data import LABEL_LIVE, LABEL_SPOOF, PairedSample
from .errors import ConfigError, NumericError, TrainingDivergedError, ValidationError
from .uncertainty import DepthUncertaintyModel, UncertainDepth, depth_kl_loss, sample_depth


@dataclass
class FasLossWeights:
    lambda_kl: float = 1e-3
    lambda_g: float = 0.1
    ratio: float = 0.75

    def __post_init__(self):
        if self.lambda_kl < 0 or self.lambda_g < 0:
            raise ConfigError("loss weights must be nonnegative")
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigError("ratio must lie in [0, 1]")


@dataclass
class DepthSample:
    """One training image with its ground-truth depth grid."""

    image: np.ndarray
    depth: np.ndarray
    label: str
    spoof_type_name: str | None = None
    generated: bool = False
    ref: str = ""


@dataclass
class TrainBatch:
    real: list[DepthSample]
    generated: list[DepthSample]


def flatten_pairs(
    pairs: list[PairedSample], generated: bool = False, prefix: str = "sample"
) -> list[DepthSample]:
    """Unroll paired samples into individual depth-supervised samples."""
    out = []
    for i, pair in enumerate(pairs):
        out.append(
            DepthSample(pair.live, pair.live_depth, LABEL_LIVE, None, generated, f"{prefix}-{i:05d}-live")
        )
        out.append(
            DepthSample(
                pair.spoof, pair.spoof_depth, LABEL_SPOOF, pair.spoof_type_name, generated,
                f"{prefix}-{i:05d}-spoof",
            )
        )
    return out


def split_counts(batch_size: int, ratio: float) -> tuple[int, int]:
    """Real/generated share of a batch: round(r*B), adjusted so a mixed ratio
    always contributes at least one sample of each kind."""
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError("ratio must lie in [0, 1]")
    n_real = int(np.floor(ratio * batch_size + 0.5))
    if 0.0 < ratio < 1.0:
        if batch_size < 2:
            raise ConfigError("mixed ratio needs batch_size >= 2")
        n_real = min(max(n_real, 1), batch_size - 1)
    return n_real, batch_size - n_real


def compose_batch(
    real_pool: list[DepthSample],
    gen_pool: list[DepthSample],
    batch_size: int,
    ratio: float,
    rng: random.Random,
) -> TrainBatch:
    """Draw one training batch without replacement from the two pools."""
    n_real, n_gen = split_counts(batch_size, ratio)
    if n_real > 0 and not real_pool:
        raise ValidationError("real pool is empty but the ratio requires real samples")
    if n_gen > 0 and not gen_pool:
        raise ValidationError("generated pool is empty but the ratio requires generated samples")
    if n_real > len(real_pool) or n_gen > len(gen_pool):
        raise ValidationError("pool smaller than its batch share")
    return TrainBatch(
        real=rng.sample(real_pool, n_real) if n_real else [],
        generated=rng.sample(gen_pool, n_gen) if n_gen else [],
    )


def depth_mse(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean squared error over depth pixels."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return ((pred - gt) ** 2).mean()


def fas_total_loss(
    real_terms: tuple[Tensor | float, Tensor | float] | None,
    gen_terms: tuple[Tensor | float, Tensor | float] | None,
    weights: FasLossWeights,
):
    """Combine (mse, kl) term pairs; either side may be absent (pure r=0/r=1)."""
    total = 0.0
    if real_terms is not None:
        r_mse, r_kl = real_terms
        total = total + r_mse + weights.lambda_kl * r_kl
    if gen_terms is not None:
        g_mse, g_kl = gen_terms
        total = total + weights.lambda_g * (g_mse + weights.lambda_kl * g_kl)
    return total


@dataclass
class FasTrainConfig:
    steps: int = 1000
    batch_size: int = 16
    lr: float = 1e-3
    weights: FasLossWeights = field(default_factory=FasLossWeights)
    seed: int = 0


class _EpochQueue:
    """Without-replacement sampler that reshuffles at every epoch boundary."""

    def __init__(self, items: list, rng: random.Random):
        self.items = items
        self.rng = rng
        self.queue: list = []

    def take(self, n: int) -> list:
        out = []
        while len(out) < n:
            if not self.queue:
                self.queue = list(self.items)
                self.rng.shuffle(self.queue)
            out.append(self.queue.pop())
        return out


def _stack(samples: list[DepthSample]) -> tuple[Tensor, Tensor]:
    images = torch.from_numpy(np.stack([s.image for s in samples])).float()
    depths = torch.from_numpy(np.stack([s.depth for s in samples])).float()
    return images, depths


def train_fas(
    model: DepthUncertaintyModel,
    real_pairs: list[PairedSample],
    gen_pairs: list[PairedSample] | None,
    config: FasTrainConfig,
) -> list[dict]:
    """Train the depth model in place; deterministic under config.seed.

    History entries carry the per-step totals split into real and generated
    contributions.
    """
    n_real, n_gen = split_counts(config.batch_size, config.weights.ratio)
    real_pool = flatten_pairs(real_pairs, generated=False, prefix="real")
    gen_pool = flatten_pairs(gen_pairs or [], generated=True, prefix="gen")
    if n_real > 0 and not real_pool:
        raise ValidationError("ratio requires real samples but the real corpus is empty")
    if n_gen > 0 and not gen_pool:
        raise ValidationError("ratio requires generated samples but none were provided")
    if config.steps == 0:
        return []

    rng = random.Random(config.seed)
    noise_rng = torch.Generator().manual_seed(config.seed)
    real_queue = _EpochQueue(real_pool, rng)
    gen_queue = _EpochQueue(gen_pool, rng)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    history: list[dict] = []
    model.train()

    for step in range(config.steps):
        batch_real = real_queue.take(n_real) if n_real else []
        batch_gen = gen_queue.take(n_gen) if n_gen else []
        images, depths = _stack(batch_real + batch_gen)

        real_terms = None
        gen_terms = None
        try:
            ud = model(images)
            noise = torch.randn(ud.mu.shape, generator=noise_rng)
            sampled = sample_depth(ud, noise)
            if n_real:
                ud_r = UncertainDepth(ud.mu[:n_real], ud.sigma[:n_real])
                real_terms = (
                    depth_mse(sampled[:n_real], depths[:n_real]),
                    depth_kl_loss(ud_r, depths[:n_real]),
                )
            if n_gen:
                ud_g = UncertainDepth(ud.mu[n_real:], ud.sigma[n_real:])
                gen_terms = (
                    depth_mse(sampled[n_real:], depths[n_real:]),
                    depth_kl_loss(ud_g, depths[n_real:]),
                )
        except NumericError as exc:
            raise TrainingDivergedError(step, f"step {step}: {exc}") from exc
        total = fas_total_loss(real_terms, gen_terms, config.weights)
        if not torch.isfinite(total):
            raise TrainingDivergedError(step)
        opt.zero_grad()
        total.backward()
        opt.step()

        history.append(
            {
                "step": step,
                "total": total.item(),
                "real_mse": real_terms[0].item() if real_terms else None,
                "real_kl": real_terms[1].item() if real_terms else None,
                "gen_mse": gen_terms[0].item() if gen_terms else None,
                "gen_kl": gen_terms[1].item() if gen_terms else None,
            }
        )

    model.eval()
    return history
