"""Paired live/spoof image generator.

A VAE with two encoders and one decoder: the live encoder produces an
identity latent, the spoof encoder produces a spoofing-pattern latent and an
identity latent from the same trunk. The decoder consumes the concatenated
triple and emits both reconstructions at once. Training combines
reconstruction, prior-KL, linear-MMD identity alignment, embedding-distance
pair consistency, angular orthogonality, and spoof-type classification, with
weights (50, 5, 1, 10) on the latter four by default. New pairs are produced
by sampling the pattern and identity latents from a standard normal and
copying the spoof identity latent into the live identity slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .data import DEPTH_SIZE, GENERATED_TYPE, PairedSample, mean_live_depth
from .errors import (
    ConfigError,
    LabelError,
    NumericError,
    TrainingDivergedError,
    ValidationError,
)

CHECKPOINT_VERSION = 1


@dataclass
class LatentGaussian:
    """Diagonal Gaussian over one latent factor: mean and positive stddev."""

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise ValueError(f"mu/sigma shape mismatch: {self.mu.shape} vs {self.sigma.shape}")


@dataclass
class LatentTriple:
    """The three disentangled factors: spoof pattern + the two identities."""

    spoof_pattern: LatentGaussian
    spoof_identity: LatentGaussian
    live_identity: LatentGaussian


@dataclass
class GenLossWeights:
    """Trade-off weights for the generator objective."""

    mmd: float = 50.0
    pair: float = 5.0
    ort: float = 1.0
    cls: float = 10.0

    def __post_init__(self):
        for name in ("mmd", "pair", "ort", "cls"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be nonnegative")


@dataclass
class GenLossTerms:
    """Scalar loss components; mmd/pair are None in unpaired mode."""

    kl: Tensor | float
    rec: Tensor | float
    ort: Tensor | float
    cls: Tensor | float
    mmd: Tensor | float | None = None
    pair: Tensor | float | None = None


class IdentityEmbedder(Protocol):
    """Maps an image batch (B, 3, H, W) to fixed-length feature vectors (B, F)."""

    def __call__(self, images: Tensor) -> Tensor: ...


class ChannelMeanEmbedder:
    """Deterministic test stand-in for a pretrained face embedder: the
    per-channel global mean, giving 3-dimensional features."""

    def __call__(self, images: Tensor) -> Tensor:
        return images.mean(dim=(-2, -1))


# ---------------------------------------------------------------------------
# network bodies


def _check_finite(t: Tensor, where: str) -> Tensor:
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite activations in {where}")
    return t


def _conv_trunk(base_width: int, n_stages: int) -> tuple[nn.Sequential, int]:
    layers: list[nn.Module] = []
    ch = 3
    for s in range(n_stages):
        out = base_width * min(2**s, 8)
        layers += [nn.Conv2d(ch, out, 4, 2, 1), nn.BatchNorm2d(out), nn.SiLU()]
        ch = out
    return nn.Sequential(*layers), ch


class LiveEncoder(nn.Module):
    """Maps a live image to its identity latent distribution."""

    def __init__(self, image_size: int, latent_dim: int, base_width: int, n_stages: int):
        super().__init__()
        grid = image_size // 2**n_stages
        if grid < 1:
            raise ConfigError(f"{n_stages} stages too deep for image size {image_size}")
        self.trunk, ch = _conv_trunk(base_width, n_stages)
        flat = ch * grid * grid
        self.head_mu = nn.Linear(flat, latent_dim)
        self.head_logvar = nn.Linear(flat, latent_dim)

    def forward(self, image: Tensor) -> LatentGaussian:
        h = self.trunk(image).flatten(1)
        mu = _check_finite(self.head_mu(h), "live encoder mu head")
        logvar = _check_finite(self.head_logvar(h), "live encoder logvar head")
        return LatentGaussian(mu, torch.exp(0.5 * logvar))


class SpoofEncoder(nn.Module):
    """Maps a spoof image to its pattern and identity latent distributions
    via two head pairs on one shared trunk."""

    def __init__(self, image_size: int, latent_dim: int, base_width: int, n_stages: int):
        super().__init__()
        grid = image_size // 2**n_stages
        if grid < 1:
            raise ConfigError(f"{n_stages} stages too deep for image size {image_size}")
        self.trunk, ch = _conv_trunk(base_width, n_stages)
        flat = ch * grid * grid
        self.pattern_mu = nn.Linear(flat, latent_dim)
        self.pattern_logvar = nn.Linear(flat, latent_dim)
        self.identity_mu = nn.Linear(flat, latent_dim)
        self.identity_logvar = nn.Linear(flat, latent_dim)

    def forward(self, image: Tensor) -> tuple[LatentGaussian, LatentGaussian]:
        h = self.trunk(image).flatten(1)
        p_mu = _check_finite(self.pattern_mu(h), "spoof encoder pattern mu head")
        p_lv = _check_finite(self.pattern_logvar(h), "spoof encoder pattern logvar head")
        i_mu = _check_finite(self.identity_mu(h), "spoof encoder identity mu head")
        i_lv = _check_finite(self.identity_logvar(h), "spoof encoder identity logvar head")
        pattern = LatentGaussian(p_mu, torch.exp(0.5 * p_lv))
        identity = LatentGaussian(i_mu, torch.exp(0.5 * i_lv))
        return pattern, identity


class PairDecoder(nn.Module):
    """Decodes the concatenated latent triple into a 6-channel tanh output
    split into the live and spoof reconstructions."""

    def __init__(self, image_size: int, latent_dim: int, base_width: int, n_stages: int):
        super().__init__()
        self.grid = image_size // 2**n_stages
        widths = [base_width * min(2**s, 8) for s in range(n_stages)][::-1]
        self.top_ch = widths[0]
        self.fc = nn.Linear(3 * latent_dim, self.top_ch * self.grid * self.grid)
        layers: list[nn.Module] = []
        for cin, cout in zip(widths, widths[1:] + [base_width]):
            layers += [nn.ConvTranspose2d(cin, cout, 4, 2, 1), nn.BatchNorm2d(cout), nn.SiLU()]
        self.ups = nn.Sequential(*layers)
        self.out = nn.Conv2d(base_width, 6, 3, 1, 1)

    def forward(self, joint: Tensor) -> tuple[Tensor, Tensor]:
        h = self.fc(joint).view(-1, self.top_ch, self.grid, self.grid)
        y = torch.tanh(self.out(self.ups(h)))
        _check_finite(y, "decoder output")
        return y[:, :3], y[:, 3:]


class SpoofPairVAE(nn.Module):
    """Two encoders, one decoder, and a linear spoof-type classifier.

    Public methods take images as (3, H, W) or (B, 3, H, W) arrays in [0, 1];
    internally the network operates on [-1, 1] and the decoder emits images in
    its tanh range [-1, 1].
    """

    def __init__(
        self,
        image_size: int = 256,
        latent_dim: int = 128,
        n_spoof_types: int = 2,
        base_width: int = 32,
        n_stages: int = 4,
    ):
        super().__init__()
        self.image_size = image_size
        self.latent_dim = latent_dim
        self.n_spoof_types = n_spoof_types
        self.base_width = base_width
        self.n_stages = n_stages
        self.enc_live = LiveEncoder(image_size, latent_dim, base_width, n_stages)
        self.enc_spoof = SpoofEncoder(image_size, latent_dim, base_width, n_stages)
        self.decoder = PairDecoder(image_size, latent_dim, base_width, n_stages)
        self.classifier = nn.Linear(latent_dim, n_spoof_types)
        self.live_depth_prior: np.ndarray | None = None

    @staticmethod
    def _as_batch(image: Tensor) -> tuple[Tensor, bool]:
        if image.dim() == 3:
            return image.unsqueeze(0), True
        if image.dim() == 4:
            return image, False
        raise ValueError(f"expected (3,H,W) or (B,3,H,W), got shape {tuple(image.shape)}")

    def encode_live(self, live: Tensor) -> LatentGaussian:
        x, squeeze = self._as_batch(live)
        g = self.enc_live(x * 2.0 - 1.0)
        if squeeze:
            return LatentGaussian(g.mu.squeeze(0), g.sigma.squeeze(0))
        return g

    def encode_spoof(self, spoof: Tensor) -> tuple[LatentGaussian, LatentGaussian]:
        x, squeeze = self._as_batch(spoof)
        pattern, identity = self.enc_spoof(x * 2.0 - 1.0)
        if squeeze:
            pattern = LatentGaussian(pattern.mu.squeeze(0), pattern.sigma.squeeze(0))
            identity = LatentGaussian(identity.mu.squeeze(0), identity.sigma.squeeze(0))
        return pattern, identity

    def decode(
        self, pattern_z: Tensor, spoof_identity_z: Tensor, live_identity_z: Tensor
    ) -> tuple[Tensor, Tensor]:
        single = pattern_z.dim() == 1
        zs = [z.unsqueeze(0) if z.dim() == 1 else z for z in (pattern_z, spoof_identity_z, live_identity_z)]
        live_hat, spoof_hat = self.decoder(torch.cat(zs, dim=-1))
        if single:
            return live_hat.squeeze(0), spoof_hat.squeeze(0)
        return live_hat, spoof_hat


# ---------------------------------------------------------------------------
# losses


def reparameterize(g: LatentGaussian, noise: Tensor) -> Tensor:
    """Differentiable sample mu + noise * sigma."""
    if noise.shape != g.mu.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != latent shape {tuple(g.mu.shape)}")
    return g.mu + noise * g.sigma


def classification_loss(classifier: nn.Module, pattern_z: Tensor, labels: Tensor | int) -> Tensor:
    """Cross-entropy of the linear spoof-type classifier on the pattern latent."""
    if pattern_z.dim() == 1:
        pattern_z = pattern_z.unsqueeze(0)
    if isinstance(labels, int):
        labels = torch.tensor([labels])
    logits = classifier(pattern_z)
    n_classes = logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"spoof-type label outside [0, {n_classes})")
    return F.cross_entropy(logits, labels)


def orthogonality_loss(a: Tensor, b: Tensor) -> Tensor:
    """Absolute cosine similarity between the two latents (0 = orthogonal)."""
    na = a.norm(dim=-1)
    nb = b.norm(dim=-1)
    if (na == 0).any() or (nb == 0).any():
        raise ValueError("zero vector has no direction for the orthogonality loss")
    cos = (a * b).sum(-1) / (na * nb)
    return cos.abs().mean()


def _standard_normal_kl(g: LatentGaussian) -> Tensor:
    if (g.sigma <= 0).any():
        raise ValueError("sigma must be strictly positive")
    per_dim = 0.5 * (g.mu**2 + g.sigma**2 - 1.0 - torch.log(g.sigma**2))
    return per_dim.sum(-1).mean()


def latent_kl_loss(triple: LatentTriple) -> Tensor:
    """Closed-form KL to the standard normal prior, summed over the three factors."""
    return (
        _standard_normal_kl(triple.spoof_pattern)
        + _standard_normal_kl(triple.spoof_identity)
        + _standard_normal_kl(triple.live_identity)
    )


def reconstruction_loss(live_hat: Tensor, spoof_hat: Tensor, live: Tensor, spoof: Tensor) -> Tensor:
    """Per-pixel mean absolute error of each reconstruction, summed over the pair."""
    if live_hat.shape != live.shape or spoof_hat.shape != spoof.shape:
        raise ValueError("reconstruction/target shape mismatch")
    return (live_hat - live).abs().mean() + (spoof_hat - spoof).abs().mean()


def mmd_loss(spoof_identity_z: Tensor, live_identity_z: Tensor) -> Tensor:
    """Linear maximum mean discrepancy: absolute difference of coordinate means."""
    if spoof_identity_z.shape[-1] != live_identity_z.shape[-1]:
        raise ValueError("identity latents must share their dimension")
    return (spoof_identity_z.mean(-1) - live_identity_z.mean(-1)).abs().mean()


def pair_loss(embedder: IdentityEmbedder, live_hat: Tensor, spoof_hat: Tensor) -> Tensor:
    """Squared L2 distance between the embeddings of the reconstructed pair."""
    e_live = embedder(live_hat)
    e_spoof = embedder(spoof_hat)
    return ((e_spoof - e_live) ** 2).sum(-1).mean()


def generator_loss(terms: GenLossTerms, weights: GenLossWeights, mode: str = "paired") -> Tensor:
    """Weighted sum of the components; unpaired mode drops the mmd/pair terms."""
    if mode not in ("paired", "unpaired"):
        raise ValidationError(f"unknown mode {mode!r}")
    total = terms.kl + terms.rec + weights.ort * terms.ort + weights.cls * terms.cls
    if mode == "paired":
        if terms.mmd is None or terms.pair is None:
            raise ValidationError("paired mode requires mmd and pair terms")
        total = total + weights.mmd * terms.mmd + weights.pair * terms.pair
    return total


# ---------------------------------------------------------------------------
# training


@dataclass
class GenTrainConfig:
    steps: int = 1000
    batch_size: int = 16
    lr: float = 2e-4
    latent_dim: int = 128
    base_width: int = 32
    n_stages: int = 4
    weights: GenLossWeights = field(default_factory=GenLossWeights)
    mode: str = "paired"
    seed: int = 0


def _corpus_tensors(corpus: list[PairedSample]) -> tuple[Tensor, Tensor, Tensor]:
    lives = torch.from_numpy(np.stack([p.live for p in corpus])).float()
    spoofs = torch.from_numpy(np.stack([p.spoof for p in corpus])).float()
    labels = torch.tensor([p.spoof_type for p in corpus], dtype=torch.long)
    return lives, spoofs, labels


def train_generator(
    corpus: list[PairedSample],
    config: GenTrainConfig,
    embedder: IdentityEmbedder | None = None,
) -> tuple[SpoofPairVAE, list[dict]]:
    """Train the generator on paired samples; deterministic under config.seed.

    Returns the trained model (with the corpus mean live depth attached as the
    generation-time depth prior) and the per-step loss history.
    """
    if not corpus:
        raise ValidationError("empty training corpus")
    if any(p.spoof_type < 0 for p in corpus):
        raise ValidationError("corpus contains samples without a valid spoof-type index")
    if config.mode not in ("paired", "unpaired"):
        raise ValidationError(f"unknown mode {config.mode!r}")
    image_size = corpus[0].live.shape[-1]
    n_types = max(p.spoof_type for p in corpus) + 1
    embedder = embedder if embedder is not None else ChannelMeanEmbedder()

    torch.manual_seed(config.seed)
    model = SpoofPairVAE(
        image_size=image_size,
        latent_dim=config.latent_dim,
        n_spoof_types=n_types,
        base_width=config.base_width,
        n_stages=config.n_stages,
    )
    model.live_depth_prior = mean_live_depth(corpus)
    if config.steps == 0:
        return model.eval(), []

    lives, spoofs, labels = _corpus_tensors(corpus)
    lives_s = lives * 2.0 - 1.0
    spoofs_s = spoofs * 2.0 - 1.0
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    rng = torch.Generator().manual_seed(config.seed)
    n = len(corpus)
    order: list[int] = []
    history: list[dict] = []
    model.train()

    for step in range(config.steps):
        while len(order) < config.batch_size:
            order.extend(torch.randperm(n, generator=rng).tolist())
        idx = torch.tensor(order[: config.batch_size])
        order = order[config.batch_size :]

        live_b, spoof_b, y_b = lives_s[idx], spoofs_s[idx], labels[idx]
        try:
            live_g = model.enc_live(live_b)
            pattern_g, identity_g = model.enc_spoof(spoof_b)
            eps = torch.randn((3, len(idx), config.latent_dim), generator=rng)
            live_z = reparameterize(live_g, eps[0])
            pattern_z = reparameterize(pattern_g, eps[1])
            identity_z = reparameterize(identity_g, eps[2])
            live_hat, spoof_hat = model.decoder(torch.cat([pattern_z, identity_z, live_z], dim=-1))

            triple = LatentTriple(pattern_g, identity_g, live_g)
            terms = GenLossTerms(
                kl=latent_kl_loss(triple),
                rec=reconstruction_loss(live_hat, spoof_hat, live_b, spoof_b),
                ort=orthogonality_loss(pattern_z, identity_z),
                cls=classification_loss(model.classifier, pattern_z, y_b),
                mmd=mmd_loss(identity_z, live_z) if config.mode == "paired" else None,
                pair=pair_loss(embedder, live_hat, spoof_hat) if config.mode == "paired" else None,
            )
            total = generator_loss(terms, config.weights, config.mode)
        except NumericError as exc:
            raise TrainingDivergedError(step, f"step {step}: {exc}") from exc
        if not torch.isfinite(total):
            raise TrainingDivergedError(step)
        opt.zero_grad()
        total.backward()
        opt.step()

        entry = {
            "step": step,
            "total": total.item(),
            "kl": terms.kl.item(),
            "rec": terms.rec.item(),
            "ort": terms.ort.item(),
            "cls": terms.cls.item(),
            "mmd": terms.mmd.item() if terms.mmd is not None else None,
            "pair": terms.pair.item() if terms.pair is not None else None,
        }
        history.append(entry)

    return model.eval(), history


# ---------------------------------------------------------------------------
# generation


def generate_pairs(
    model: SpoofPairVAE,
    n: int,
    seed: int,
    live_depth: np.ndarray | None = None,
    batch_size: int = 256,
    return_latents: bool = False,
):
    """Sample n new pairs from the prior, copying the spoof identity latent
    into the live identity slot so each pair shares an identity.

    Generated live samples carry the model's stored mean-live-depth prior (or
    the explicit ``live_depth`` override); generated spoof depth is zero.
    """
    if n < 0:
        raise ValidationError("n must be nonnegative")
    prior = live_depth if live_depth is not None else model.live_depth_prior
    if n > 0 and prior is None:
        raise ValidationError("no live-depth prior available; pass live_depth=")
    if prior is not None:
        prior = np.asarray(prior, dtype=np.float32)

    model.eval()
    rng = torch.Generator().manual_seed(seed)
    pairs: list[PairedSample] = []
    latents: list[dict[str, Tensor]] = []
    zero_depth = np.zeros((DEPTH_SIZE, DEPTH_SIZE), dtype=np.float32)
    with torch.no_grad():
        done = 0
        while done < n:
            b = min(batch_size, n - done)
            pattern_z = torch.randn((b, model.latent_dim), generator=rng)
            spoof_identity_z = torch.randn((b, model.latent_dim), generator=rng)
            live_identity_z = spoof_identity_z.clone()
            live_hat, spoof_hat = model.decode(pattern_z, spoof_identity_z, live_identity_z)
            live01 = ((live_hat + 1.0) * 0.5).clamp(0.0, 1.0).numpy().astype(np.float32)
            spoof01 = ((spoof_hat + 1.0) * 0.5).clamp(0.0, 1.0).numpy().astype(np.float32)
            for j in range(b):
                pairs.append(
                    PairedSample(
                        live=live01[j],
                        spoof=spoof01[j],
                        identity_id=f"gen-{done + j:05d}",
                        spoof_type=-1,
                        spoof_type_name=GENERATED_TYPE,
                        live_depth=prior.copy(),
                        spoof_depth=zero_depth.copy(),
                    )
                )
            if return_latents:
                latents.append(
                    {
                        "pattern": pattern_z,
                        "spoof_identity": spoof_identity_z,
                        "live_identity": live_identity_z,
                    }
                )
            done += b
    if return_latents:
        return pairs, latents
    return pairs


# ---------------------------------------------------------------------------
# persistence


def save_generator(model: SpoofPairVAE, path: Path | str, config_snapshot: str | None = None) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "kind": "generator",
            "image_size": model.image_size,
            "latent_dim": model.latent_dim,
            "n_spoof_types": model.n_spoof_types,
            "base_width": model.base_width,
            "n_stages": model.n_stages,
            "state_dict": model.state_dict(),
            "live_depth_prior": model.live_depth_prior,
            "config_snapshot": config_snapshot,
        },
        path,
    )


def load_generator(path: Path | str) -> SpoofPairVAE:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("kind") != "generator":
        raise ValidationError(f"{path} is not a generator checkpoint")
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {blob.get('format_version')}")
    model = SpoofPairVAE(
        image_size=blob["image_size"],
        latent_dim=blob["latent_dim"],
        n_spoof_types=blob["n_spoof_types"],
        base_width=blob["base_width"],
        n_stages=blob["n_stages"],
    )
    model.load_state_dict(blob["state_dict"])
    model.live_depth_prior = blob["live_depth_prior"]
    return model.eval()
