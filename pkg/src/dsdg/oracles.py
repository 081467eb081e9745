"""Independent verification oracles.

These deliberately recompute quantities along a different route than the
production code: central finite differences against autograd gradients, a
Monte-Carlo estimate against the closed-form KL expressions, and a
brute-force threshold sweep against the vectorized EER search. Oracle runs
use double precision throughout.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .data import LABEL_LIVE, LABEL_SPOOF
from .errors import NumericError, ValidationError
from .generator import (
    ChannelMeanEmbedder,
    LatentGaussian,
    LatentTriple,
    classification_loss,
    latent_kl_loss,
    mmd_loss,
    orthogonality_loss,
    pair_loss,
    reconstruction_loss,
)
from .metrics import ScoredSample, eer
from .training import depth_mse
from .uncertainty import UncertainDepth, depth_kl_loss


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: int
    worst_index: int
    step: float


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


# ---------------------------------------------------------------------------
# finite differences


def fd_gradient(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    max_coords: int | None = None,
    rng: random.Random | None = None,
) -> GradCheckReport:
    """Compare autograd gradients of a scalar loss against central differences.

    ``params`` are double-precision leaf tensors with requires_grad that the
    closure ``loss_fn`` reads. Relative error per coordinate is
    |a - f| / max(|a|, |f|, 1e-8).
    """
    params = list(params)
    for p in params:
        if p.dtype != torch.float64:
            raise ValidationError("oracle runs require double-precision parameters")
        if not p.requires_grad:
            raise ValidationError("parameters must have requires_grad=True")

    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NumericError("loss is non-finite at the check point")
    analytic = torch.autograd.grad(loss, params)

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.numel())]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng or random.Random(0)
        coords = rng.sample(coords, max_coords)

    worst = (0.0, 0, 0)
    with torch.no_grad():
        for pi, ci in coords:
            flat = params[pi].view(-1)
            orig = flat[ci].item()
            flat[ci] = orig + step
            f_plus = float(loss_fn())
            flat[ci] = orig - step
            f_minus = float(loss_fn())
            flat[ci] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[pi].view(-1)[ci])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > worst[0]:
                worst = (rel, pi, ci)
    return GradCheckReport(worst[0], worst[1], worst[2], step)


def gradient_suite(
    seed: int = 0, n_points: int = 10, step: float = 1e-5
) -> list[tuple[str, float]]:
    """Finite-difference-check every production loss at random points.

    Returns (loss name, worst relative error over all points and coordinates).
    """
    gen = torch.Generator().manual_seed(seed)
    d = 6

    def randn(*shape):
        return torch.randn(shape, generator=gen, dtype=torch.float64)

    def randsig(*shape):
        return (0.5 + 1.5 * torch.rand(shape, generator=gen, dtype=torch.float64)).requires_grad_()

    results = []

    def run(name, make):
        worst = 0.0
        for _ in range(n_points):
            loss_fn, params = make()
            rep = fd_gradient(loss_fn, params, step=step)
            worst = max(worst, rep.max_rel_error)
        results.append((name, worst))

    def make_cls():
        lin = nn.Linear(d, 3, dtype=torch.float64)
        with torch.no_grad():
            lin.weight.copy_(randn(3, d))
            lin.bias.copy_(randn(3))
        z = randn(d).requires_grad_()
        y = int(torch.randint(0, 3, (1,), generator=gen))
        return (lambda: classification_loss(lin, z, y)), (lin.weight, lin.bias, z)

    def make_ort():
        a = randn(d).requires_grad_()
        b = randn(d).requires_grad_()
        return (lambda: orthogonality_loss(a, b)), (a, b)

    def make_latent_kl():
        mus = [randn(d).requires_grad_() for _ in range(3)]
        sigs = [randsig(d) for _ in range(3)]
        triple = lambda: LatentTriple(
            LatentGaussian(mus[0], sigs[0]),
            LatentGaussian(mus[1], sigs[1]),
            LatentGaussian(mus[2], sigs[2]),
        )
        return (lambda: latent_kl_loss(triple())), (*mus, *sigs)

    def make_rec():
        imgs = [randn(3, 4, 4).requires_grad_() for _ in range(4)]
        return (lambda: reconstruction_loss(*imgs)), tuple(imgs)

    def make_mmd():
        a = randn(d).requires_grad_()
        b = randn(d).requires_grad_()
        return (lambda: mmd_loss(a, b)), (a, b)

    def make_pair():
        embedder = ChannelMeanEmbedder()
        a = randn(3, 4, 4).requires_grad_()
        b = randn(3, 4, 4).requires_grad_()
        return (lambda: pair_loss(embedder, a, b)), (a, b)

    def make_depth_kl():
        mu = randn(4, 4).requires_grad_()
        sig = randsig(4, 4)
        gt = randn(4, 4)
        return (lambda: depth_kl_loss(UncertainDepth(mu, sig), gt)), (mu, sig)

    def make_mse():
        pred = randn(4, 4).requires_grad_()
        gt = randn(4, 4)
        return (lambda: depth_mse(pred, gt)), (pred,)

    run("classification", make_cls)
    run("orthogonality", make_ort)
    run("latent_kl", make_latent_kl)
    run("reconstruction", make_rec)
    run("mmd", make_mmd)
    run("pair", make_pair)
    run("depth_kl", make_depth_kl)
    run("depth_mse", make_mse)
    return results


# ---------------------------------------------------------------------------
# Monte-Carlo KL


def mc_kl(
    mu: float, sigma: float, mu_hat: float, n_samples: int = 10**6, seed: int = 0
) -> tuple[float, float]:
    """Monte-Carlo estimate of KL(N(mu, sigma^2) || N(mu_hat, 1)) with its
    standard error, from samples of the first distribution."""
    if sigma <= 0:
        raise ValidationError("sigma must be strictly positive")
    if n_samples < 10**4:
        raise ValidationError("use at least 1e4 samples for a usable estimate")
    rng = np.random.default_rng(seed)
    z = mu + sigma * rng.standard_normal(n_samples)
    log_q = -0.5 * ((z - mu) / sigma) ** 2 - np.log(sigma)
    log_p = -0.5 * (z - mu_hat) ** 2
    diff = log_q - log_p
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(n_samples))


# ---------------------------------------------------------------------------
# brute-force threshold sweep


def sweep_eer(scores: list[ScoredSample]) -> tuple[float, float]:
    """Exhaustive EER search over every midpoint between adjacent distinct
    scores (plus sentinels), counting errors sample by sample."""
    live = sorted(s.score for s in scores if s.label == LABEL_LIVE)
    spoof = sorted(s.score for s in scores if s.label == LABEL_SPOOF)
    if not live or not spoof:
        raise ValidationError("EER needs both live and spoof samples")
    distinct = sorted(set(live) | set(spoof))
    cands = [distinct[0] - 1.0]
    for a, b in zip(distinct, distinct[1:]):
        cands.append((a + b) / 2.0)
    cands.append(distinct[-1] + 1.0)

    best: tuple[float, float, float] | None = None
    for t in cands:
        fp = sum(1 for v in spoof if v >= t)
        fn = sum(1 for v in live if v < t)
        apcer = fp / len(spoof)
        bpcer = fn / len(live)
        gap = abs(apcer - bpcer)
        if best is None or gap < best[0]:
            best = (gap, (apcer + bpcer) / 2.0, t)
    assert best is not None
    return best[1], best[2]


# ---------------------------------------------------------------------------
# full suite


def _random_score_set(rng: np.random.Generator, max_size: int) -> list[ScoredSample]:
    n_live = int(rng.integers(1, max_size // 2 + 1))
    n_spoof = int(rng.integers(1, max_size // 2 + 1))
    # mix separable, overlapping, and tied scores
    live = rng.normal(0.6, 0.25, n_live)
    spoof = rng.normal(0.4, 0.25, n_spoof)
    if rng.random() < 0.3:
        live = np.round(live, 1)
        spoof = np.round(spoof, 1)
    return [ScoredSample(float(v), LABEL_LIVE) for v in live] + [
        ScoredSample(float(v), LABEL_SPOOF) for v in spoof
    ]


def run_suite(
    seed: int = 0,
    n_grad_points: int = 10,
    grad_tol: float = 1e-4,
    n_kl_triples: int = 20,
    mc_samples: int = 10**6,
    n_score_sets: int = 1000,
    max_set_size: int = 256,
) -> list[CheckResult]:
    """Run every oracle check; used by the verification CLI."""
    results: list[CheckResult] = []

    for name, worst in gradient_suite(seed=seed, n_points=n_grad_points):
        results.append(
            CheckResult(
                f"gradient/{name}",
                worst < grad_tol,
                f"max rel err {worst:.3e} (tol {grad_tol:.0e})",
            )
        )

    rng = np.random.default_rng(seed)
    worst_pull = 0.0
    ok = True
    for i in range(n_kl_triples):
        mu = float(rng.uniform(-2, 2))
        sigma = float(rng.uniform(0.3, 2.5))
        mu_hat = float(rng.uniform(-2, 2))

        # depth-regularizer form: KL to N(mu_hat, 1)
        est, se = mc_kl(mu, sigma, mu_hat, n_samples=mc_samples, seed=seed + 1000 + i)
        depth = float(
            depth_kl_loss(
                UncertainDepth(torch.tensor([[mu]]), torch.tensor([[sigma]])),
                torch.tensor([[mu_hat]]),
            )
        )
        pull = abs(est - depth) / se
        worst_pull = max(worst_pull, pull)
        ok = ok and pull <= 3.0

        # latent prior form: KL to N(0, 1), via a triple with two standard factors
        est0, se0 = mc_kl(mu, sigma, 0.0, n_samples=mc_samples, seed=seed + 2000 + i)
        latent = float(
            latent_kl_loss(
                LatentTriple(
                    LatentGaussian(torch.tensor([mu]), torch.tensor([sigma])),
                    LatentGaussian(torch.zeros(1), torch.ones(1)),
                    LatentGaussian(torch.zeros(1), torch.ones(1)),
                )
            )
        )
        pull0 = abs(est0 - latent) / se0
        worst_pull = max(worst_pull, pull0)
        ok = ok and pull0 <= 3.0
    results.append(
        CheckResult(
            "mc_kl/closed_form",
            ok,
            f"worst |est-closed|/stderr {worst_pull:.2f} over {n_kl_triples} triples x 2 forms",
        )
    )

    mismatches = 0
    for i in range(n_score_sets):
        scores = _random_score_set(np.random.default_rng(seed + 5000 + i), max_set_size)
        e1, t1 = eer(scores)
        e2, t2 = sweep_eer(scores)
        if e1 != e2 or t1 != t2:
            mismatches += 1
    results.append(
        CheckResult(
            "eer/sweep_equivalence",
            mismatches == 0,
            f"{mismatches} mismatches over {n_score_sets} random score sets",
        )
    )
    return results
