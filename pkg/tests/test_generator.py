import math

import numpy as np
import pytest
import torch

from dsdg import data, generator
from dsdg.errors import ConfigError, LabelError, TrainingDivergedError, ValidationError
from dsdg.generator import (
    ChannelMeanEmbedder,
    GenLossTerms,
    GenLossWeights,
    GenTrainConfig,
    LatentGaussian,
    LatentTriple,
    SpoofPairVAE,
    classification_loss,
    generate_pairs,
    generator_loss,
    latent_kl_loss,
    load_generator,
    mmd_loss,
    orthogonality_loss,
    pair_loss,
    reconstruction_loss,
    reparameterize,
    save_generator,
    train_generator,
)


def _small_vae(seed=0, **kw):
    torch.manual_seed(seed)
    defaults = dict(image_size=32, latent_dim=8, n_spoof_types=3, base_width=8, n_stages=3)
    defaults.update(kw)
    return SpoofPairVAE(**defaults).eval()


def _zero_heads(*linears):
    with torch.no_grad():
        for lin in linears:
            lin.weight.zero_()
            lin.bias.zero_()


class TestEncoders:
    def test_zero_initialized_heads_give_standard_latent(self):
        model = _small_vae()
        _zero_heads(model.enc_live.head_mu, model.enc_live.head_logvar)
        g = model.encode_live(torch.zeros(3, 32, 32))
        assert torch.equal(g.mu, torch.zeros(8))
        assert torch.equal(g.sigma, torch.ones(8))

    def test_spoof_zero_initialized_heads(self):
        model = _small_vae()
        _zero_heads(
            model.enc_spoof.pattern_mu,
            model.enc_spoof.pattern_logvar,
            model.enc_spoof.identity_mu,
            model.enc_spoof.identity_logvar,
        )
        pattern, identity = model.encode_spoof(torch.zeros(3, 32, 32))
        for g in (pattern, identity):
            assert torch.equal(g.mu, torch.zeros(8))
            assert torch.equal(g.sigma, torch.ones(8))

    def test_forward_deterministic(self):
        model = _small_vae(seed=1)
        x = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(2))
        a = model.encode_live(x)
        b = model.encode_live(x)
        assert torch.equal(a.mu, b.mu) and torch.equal(a.sigma, b.sigma)
        pa, ia = model.encode_spoof(x)
        pb, ib = model.encode_spoof(x)
        assert torch.equal(pa.mu, pb.mu) and torch.equal(ia.mu, ib.mu)

    @pytest.mark.parametrize("which", ["live", "spoof"])
    def test_input_jacobian_matches_finite_differences(self, which):
        model = _small_vae(seed=3).double()
        x = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(4), dtype=torch.float64)
        x.requires_grad_(True)

        def mu_of(inp):
            if which == "live":
                return model.encode_live(inp).mu
            return model.encode_spoof(inp)[0].mu

        mu = mu_of(x)
        h = 1e-5
        rng = np.random.default_rng(0)
        for _ in range(4):
            out_i = int(rng.integers(0, mu.numel()))
            grad = torch.autograd.grad(mu.view(-1)[out_i], x, retain_graph=True)[0]
            in_i = int(rng.integers(0, x.numel()))
            with torch.no_grad():
                orig = x.view(-1)[in_i].item()
                x.view(-1)[in_i] = orig + h
                up = mu_of(x).view(-1)[out_i].item()
                x.view(-1)[in_i] = orig - h
                down = mu_of(x).view(-1)[out_i].item()
                x.view(-1)[in_i] = orig
            numeric = (up - down) / (2 * h)
            analytic = grad.view(-1)[in_i].item()
            assert abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8) < 1e-4


class TestReparameterize:
    def test_zero_noise_returns_mean(self):
        g = LatentGaussian(torch.tensor([1.0, -2.0]), torch.tensor([0.5, 3.0]))
        assert torch.equal(reparameterize(g, torch.zeros(2)), g.mu)

    def test_standard_gaussian_passthrough(self):
        eps = torch.tensor([0.3, -1.2, 2.0])
        g = LatentGaussian(torch.zeros(3), torch.ones(3))
        assert torch.equal(reparameterize(g, eps), eps)

    def test_dimension_mismatch(self):
        g = LatentGaussian(torch.zeros(3), torch.ones(3))
        with pytest.raises(ValueError):
            reparameterize(g, torch.zeros(4))

    def test_linear_in_noise(self):
        g = LatentGaussian(torch.tensor([1.0, 2.0]), torch.tensor([0.5, 0.25]))
        e1 = torch.tensor([1.0, -2.0])
        e2 = torch.tensor([0.5, 4.0])
        lhs = reparameterize(g, 2.0 * e1 + e2)
        rhs = 2.0 * reparameterize(g, e1) + reparameterize(g, e2) - 2.0 * g.mu
        assert torch.equal(lhs, rhs)

    def test_monte_carlo_statistics(self):
        mu = torch.tensor([0.7, -1.3, 2.0, 0.0])
        sigma = torch.tensor([0.5, 1.5, 0.1, 2.0])
        g = LatentGaussian(mu, sigma)
        n = 10**5
        eps = torch.randn((n, 4), generator=torch.Generator().manual_seed(9))
        z = reparameterize(LatentGaussian(mu.expand(n, 4), sigma.expand(n, 4)), eps)
        mean_err = (z.mean(0) - mu).abs()
        assert (mean_err <= 4.0 * sigma / math.sqrt(n)).all()
        assert ((z.std(0) / sigma - 1.0).abs() <= 0.02).all()


class TestDecode:
    def test_deterministic_and_shape(self):
        model = _small_vae(seed=5)
        z = torch.randn(3, 8, generator=torch.Generator().manual_seed(6))
        a_live, a_spoof = model.decode(z[0], z[1], z[2])
        b_live, b_spoof = model.decode(z[0], z[1], z[2])
        assert torch.equal(a_live, b_live) and torch.equal(a_spoof, b_spoof)
        assert a_live.shape == a_spoof.shape == (3, 32, 32)
        assert a_live.min() >= -1.0 and a_live.max() <= 1.0

    def test_decoder_input_width_is_three_latents(self):
        model = _small_vae()
        assert model.decoder.fc.in_features == 3 * model.latent_dim


class TestClassificationLoss:
    def test_uniform_logits_give_log_k(self):
        lin = torch.nn.Linear(8, 5)
        _zero_heads(lin)
        loss = classification_loss(lin, torch.randn(8), 2)
        assert torch.isclose(loss, torch.tensor(math.log(5.0)), atol=1e-6)

    def test_hand_evaluated_three_class_case(self):
        # logits (1, 0, 0), y=0: -log(e / (e + 2)) = 0.5514...
        lin = torch.nn.Linear(3, 3)
        with torch.no_grad():
            lin.weight.copy_(torch.eye(3))
            lin.bias.zero_()
        loss = classification_loss(lin, torch.tensor([1.0, 0.0, 0.0]), 0)
        expected = -math.log(math.e / (math.e + 2.0))
        assert abs(loss.item() - expected) < 1e-6
        assert abs(expected - 0.5514) < 1e-4

    def test_margin_growth_drives_loss_to_zero(self):
        lin = torch.nn.Linear(3, 3)
        with torch.no_grad():
            lin.weight.copy_(torch.eye(3))
            lin.bias.zero_()
        margins = [1.0, 2.0, 5.0, 10.0]
        losses = [
            classification_loss(lin, torch.tensor([m, 0.0, 0.0]), 0).item() for m in margins
        ]
        assert all(b < a for a, b in zip(losses, losses[1:]))
        assert losses[-1] < 1e-3

    def test_label_out_of_range(self):
        lin = torch.nn.Linear(4, 3)
        with pytest.raises(LabelError):
            classification_loss(lin, torch.randn(4), 3)


class TestOrthogonalityLoss:
    def test_orthogonal_vectors(self):
        assert float(orthogonality_loss(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0]))) == 0.0

    def test_parallel_vectors(self):
        val = float(orthogonality_loss(torch.tensor([1.0, 1.0]), torch.tensor([2.0, 2.0])))
        assert abs(val - 1.0) < 1e-6

    def test_hand_evaluated_cosine(self):
        val = float(orthogonality_loss(torch.tensor([1.0, 0.0]), torch.tensor([1.0, 1.0])))
        assert abs(val - 0.70711) < 1e-5

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            orthogonality_loss(torch.zeros(3), torch.ones(3))

    def test_bounded_in_unit_interval(self):
        g = torch.Generator().manual_seed(11)
        for _ in range(50):
            a = torch.randn(6, generator=g)
            b = torch.randn(6, generator=g)
            val = float(orthogonality_loss(a, b))
            assert 0.0 <= val <= 1.0


def _standard(d=1):
    return LatentGaussian(torch.zeros(d), torch.ones(d))


class TestLatentKl:
    def test_standard_triple_is_zero(self):
        assert float(latent_kl_loss(LatentTriple(_standard(4), _standard(4), _standard(4)))) == 0.0

    def test_closed_form_single_dimension(self):
        shifted = LatentGaussian(torch.tensor([1.0]), torch.tensor([1.0]))
        val = float(latent_kl_loss(LatentTriple(shifted, _standard(), _standard())))
        assert abs(val - 0.5) < 1e-7

    def test_nonpositive_sigma_rejected(self):
        bad = LatentGaussian(torch.zeros(2), torch.tensor([1.0, 0.0]))
        with pytest.raises(ValueError):
            latent_kl_loss(LatentTriple(bad, _standard(2), _standard(2)))

    def test_nonnegative_with_equality_iff_standard(self):
        g = torch.Generator().manual_seed(13)
        for _ in range(20):
            lg = LatentGaussian(torch.randn(3, generator=g), 0.3 + torch.rand(3, generator=g))
            val = float(latent_kl_loss(LatentTriple(lg, _standard(3), _standard(3))))
            assert val >= 0.0
            if not (torch.allclose(lg.mu, torch.zeros(3)) and torch.allclose(lg.sigma, torch.ones(3))):
                assert val > 0.0


class TestReconstructionLoss:
    def test_perfect_reconstruction(self):
        x = torch.rand(3, 4, 4)
        y = torch.rand(3, 4, 4)
        assert float(reconstruction_loss(x, y, x, y)) == 0.0

    def test_constant_offset_convention(self):
        live = torch.rand(3, 4, 4, generator=torch.Generator().manual_seed(1))
        spoof = torch.rand(3, 4, 4, generator=torch.Generator().manual_seed(2))
        val = reconstruction_loss(live, spoof + 0.1, live, spoof)
        assert abs(float(val) - 0.1) < 1e-6

    def test_symmetric_under_pair_swap(self):
        g = torch.Generator().manual_seed(3)
        a, b, c, d = (torch.rand(3, 4, 4, generator=g) for _ in range(4))
        assert torch.isclose(reconstruction_loss(a, b, c, d), reconstruction_loss(b, a, d, c))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            reconstruction_loss(torch.rand(3, 4, 4), torch.rand(3, 4, 4), torch.rand(3, 5, 5), torch.rand(3, 4, 4))


class TestMmdLoss:
    def test_identical_latents(self):
        z = torch.randn(8)
        assert float(mmd_loss(z, z)) == 0.0

    def test_hand_evaluated(self):
        assert float(mmd_loss(torch.tensor([1.0, 1.0]), torch.tensor([0.0, 0.0]))) == 1.0

    def test_invariant_under_common_permutation(self):
        g = torch.Generator().manual_seed(7)
        a = torch.randn(6, generator=g)
        b = torch.randn(6, generator=g)
        perm = torch.randperm(6, generator=g)
        assert torch.isclose(mmd_loss(a, b), mmd_loss(a[perm], b[perm]))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mmd_loss(torch.randn(4), torch.randn(5))


class TestPairLoss:
    def test_identical_images(self):
        x = torch.rand(3, 8, 8)
        assert float(pair_loss(ChannelMeanEmbedder(), x, x)) == 0.0

    def test_channel_mean_offset(self):
        x = torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(5))
        y = x.clone()
        y[0] += 1.0
        assert abs(float(pair_loss(ChannelMeanEmbedder(), x, y)) - 1.0) < 1e-5

    def test_nonnegative(self):
        g = torch.Generator().manual_seed(6)
        for _ in range(10):
            assert float(pair_loss(ChannelMeanEmbedder(), torch.randn(3, 4, 4, generator=g), torch.randn(3, 4, 4, generator=g))) >= 0.0


class TestGeneratorLoss:
    def test_all_zero(self):
        terms = GenLossTerms(kl=0.0, rec=0.0, ort=0.0, cls=0.0, mmd=0.0, pair=0.0)
        assert generator_loss(terms, GenLossWeights()) == 0.0

    def test_default_weighted_sum(self):
        terms = GenLossTerms(kl=1.0, rec=1.0, ort=1.0, cls=1.0, mmd=1.0, pair=1.0)
        assert generator_loss(terms, GenLossWeights()) == 68.0

    def test_unpaired_drops_identity_terms(self):
        terms = GenLossTerms(kl=1.0, rec=1.0, ort=1.0, cls=1.0)
        assert generator_loss(terms, GenLossWeights(), mode="unpaired") == 13.0

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError):
            GenLossWeights(mmd=-1.0)

    def test_paired_minus_unpaired_identity(self):
        terms = GenLossTerms(kl=2.0, rec=0.5, ort=0.25, cls=1.0, mmd=0.5, pair=0.25)
        w = GenLossWeights()
        paired = generator_loss(terms, w, "paired")
        unpaired = generator_loss(terms, w, "unpaired")
        assert paired - unpaired == w.mmd * terms.mmd + w.pair * terms.pair
        g = torch.Generator().manual_seed(8)
        for _ in range(10):
            vals = torch.rand(6, generator=g).tolist()
            t = GenLossTerms(kl=vals[0], rec=vals[1], ort=vals[2], cls=vals[3], mmd=vals[4], pair=vals[5])
            delta = generator_loss(t, w, "paired") - generator_loss(t, w, "unpaired")
            assert abs(delta - (w.mmd * t.mmd + w.pair * t.pair)) < 1e-12


def _toy_train_config(**kw):
    defaults = dict(steps=40, batch_size=8, latent_dim=16, base_width=8, n_stages=3, seed=5)
    defaults.update(kw)
    return GenTrainConfig(**defaults)


class TestTrainGenerator:
    def test_zero_steps_leaves_params_at_init(self, tiny_corpus):
        model, history = train_generator(tiny_corpus, _toy_train_config(steps=0))
        assert history == []
        torch.manual_seed(5)
        fresh = SpoofPairVAE(32, 16, 2, 8, 3)
        for a, b in zip(model.state_dict().values(), fresh.state_dict().values()):
            assert torch.equal(a, b)

    def test_deterministic_history(self, tiny_corpus):
        _, h1 = train_generator(tiny_corpus, _toy_train_config())
        _, h2 = train_generator(tiny_corpus, _toy_train_config())
        assert h1 == h2

    def test_loss_decreases(self, tiny_corpus):
        _, history = train_generator(tiny_corpus, _toy_train_config(steps=120))
        assert history[-1]["total"] < history[0]["total"]

    def test_unpaired_mode_drops_terms(self, tiny_corpus):
        _, history = train_generator(tiny_corpus, _toy_train_config(mode="unpaired"))
        assert history[0]["mmd"] is None and history[0]["pair"] is None

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValidationError):
            train_generator([], _toy_train_config())

    def test_nan_divergence_aborts_with_step(self, tiny_corpus):
        with pytest.raises(TrainingDivergedError) as exc:
            train_generator(tiny_corpus, _toy_train_config(steps=30, lr=1e18))
        assert exc.value.step < 30


@pytest.fixture(scope="module")
def trained(toy_corpus):
    model, _ = train_generator(toy_corpus[:4], _toy_train_config(steps=30))
    return model


class TestGeneratePairs:
    def test_zero_requested_is_empty(self, trained):
        assert generate_pairs(trained, 0, seed=0) == []

    def test_negative_rejected(self, trained):
        with pytest.raises(ValidationError):
            generate_pairs(trained, -1, seed=0)

    def test_identity_copy_invariant(self, trained):
        pairs, latents = generate_pairs(trained, 10, seed=1, return_latents=True)
        assert len(pairs) == 10
        for batch in latents:
            assert torch.equal(batch["live_identity"], batch["spoof_identity"])

    def test_reproducible_under_seed(self, trained):
        a = generate_pairs(trained, 6, seed=2)
        b = generate_pairs(trained, 6, seed=2)
        for x, y in zip(a, b):
            assert np.array_equal(x.live, y.live)
            assert np.array_equal(x.spoof, y.spoof)

    def test_marked_generated_with_depth_prior(self, trained):
        (pair,) = generate_pairs(trained, 1, seed=3)
        assert pair.spoof_type_name == data.GENERATED_TYPE
        assert not pair.spoof_depth.any()
        assert np.array_equal(pair.live_depth, trained.live_depth_prior)
        assert 0.0 <= pair.live.min() and pair.live.max() <= 1.0


def test_checkpoint_round_trip(tmp_path, tiny_corpus):
    model, _ = train_generator(tiny_corpus, _toy_train_config(steps=10))
    save_generator(model, tmp_path / "gen.pt", "snapshot")
    loaded = load_generator(tmp_path / "gen.pt")
    a = generate_pairs(model, 3, seed=4)
    b = generate_pairs(loaded, 3, seed=4)
    for x, y in zip(a, b):
        assert np.array_equal(x.live, y.live)
        assert np.array_equal(x.spoof, y.spoof)


def test_load_rejects_wrong_kind(tmp_path):
    torch.save({"kind": "other"}, tmp_path / "x.pt")
    with pytest.raises(ValidationError):
        load_generator(tmp_path / "x.pt")
