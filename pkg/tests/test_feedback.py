import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from iterfeed import config as C
from iterfeed.charset import Charset
from iterfeed.conditioner import modulate
from iterfeed.feedback import (FeedbackNet, LatentDistribution, kl_divergence, sample)
from iterfeed.model import build_model
from iterfeed.recognizer import targets_tensor

from conftest import tiny_config

FULL_SHAPES = [(64, 16, 50), (128, 8, 25), (256, 4, 25), (256, 2, 25), (256, 1, 25)]


@pytest.fixture(scope="module")
def full_fb():
    torch.manual_seed(0)
    return FeedbackNet(29, C.FeedbackConfig(), C.RecognizerConfig().channels).eval()


def tiny_fb(seed=0, **kw):
    torch.manual_seed(seed)
    cfg = tiny_config(**kw)
    return FeedbackNet(29, cfg.feedback, cfg.recognizer.channels)


def gauss(mu, sigma):
    return LatentDistribution(torch.as_tensor(mu, dtype=torch.float64),
                              torch.as_tensor(sigma, dtype=torch.float64))


# -- encoder / heads ------------------------------------------------------------------

def test_encoder_contract(full_fb):
    cs = Charset()
    a = full_fb.encode([cs.encode("ab")])
    assert a.shape == (1, 512)
    assert torch.equal(a, full_fb.encode([cs.encode("ab")]))
    assert not torch.allclose(a, full_fb.encode([cs.encode("ba")]))
    empty = full_fb.encode([[]])
    assert empty.shape == (1, 512) and torch.isfinite(empty).all()


def test_encoder_batch_matches_single():
    fb = tiny_fb()
    seqs = [[3, 4, 5, 6], [7], []]
    batch = fb.encode(seqs)
    for i, s in enumerate(seqs):
        assert torch.allclose(batch[i], fb.encode([s])[0], atol=1e-6)


def test_prior_and_posterior_heads(full_fb):
    cs = Charset()
    y = full_fb.encode([cs.encode("hello"), cs.encode("nello")])
    yh = full_fb.encode([cs.encode("hello"), cs.encode("hello")])
    post, prior = full_fb.posterior(y, yh), full_fb.prior(y)
    for d in (post, prior):
        assert d.mu.shape == d.sigma.shape == (2, 256)
        assert (d.sigma > 0).all()
    assert not torch.allclose(post.mu[0], post.mu[1])
    assert not torch.allclose(prior.mu[0], prior.mu[1])


# -- sampling and KL ------------------------------------------------------------------

def test_sample_contract():
    d = gauss([0.5, -1.0], [2.0, 1e-6])
    assert torch.equal(sample(d, torch.zeros(2, dtype=torch.float64)), d.mu)
    z = sample(d, torch.ones(2, dtype=torch.float64))
    assert abs(float(z[1]) - -1.0) < 1e-5
    with pytest.raises(ValueError):
        sample(d, torch.zeros(3))


def test_sample_monte_carlo_mean():
    g = torch.Generator().manual_seed(0)
    mu, sigma = torch.randn(8, generator=g), torch.rand(8, generator=g) + 0.5
    z = sample(LatentDistribution(mu, sigma), torch.randn(100_000, 8, generator=g))
    assert (z.mean(0) - mu).abs().max() < 0.02


def test_kl_closed_form_values():
    assert float(kl_divergence(gauss([1.0], [1.0]), gauss([0.0], [1.0]))) == pytest.approx(
        0.5, abs=1e-10)
    ref = math.log(2) + 0.125 - 0.5
    assert float(kl_divergence(gauss([0.0], [0.5]), gauss([0.0], [1.0]))) == pytest.approx(
        ref, abs=1e-12)
    d = gauss([0.3, -2.0], [0.7, 1.3])
    assert float(kl_divergence(d, d)) == 0.0


def mc_kl(q, p, n, g):
    z = q.mu + q.sigma * torch.randn(n, q.mu.shape[-1], generator=g, dtype=torch.float64)

    def logpdf(d):
        return (-0.5 * ((z - d.mu) / d.sigma) ** 2 - torch.log(d.sigma)
                - 0.5 * math.log(2 * math.pi)).sum(-1)

    return float((logpdf(q) - logpdf(p)).mean())


def test_kl_matches_monte_carlo_half_normal_case():
    g = torch.Generator().manual_seed(1)
    q, p = gauss([0.0], [0.5]), gauss([0.0], [1.0])
    exact = float(kl_divergence(q, p))
    assert abs(mc_kl(q, p, 1_000_000, g) - exact) / exact < 0.01


def test_kl_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        kl_divergence(gauss([0.0], [0.0]), gauss([0.0], [1.0]))
    with pytest.raises(ValueError):
        kl_divergence(gauss([0.0], [1.0]), gauss([0.0], [-1.0]))
    with pytest.raises(ValueError):
        kl_divergence(gauss([0.0, 1.0], [1.0, 1.0]), gauss([0.0], [1.0]))


def test_kl_reduction_mean():
    q, p = gauss([1.0, 0.0], [1.0, 1.0]), gauss([0.0, 0.0], [1.0, 1.0])
    assert float(kl_divergence(q, p, "mean")) == pytest.approx(0.25, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.05, 5), st.floats(-5, 5),
                          st.floats(0.05, 5)), min_size=1, max_size=6))
def test_kl_nonnegative(params):
    mq, sq, mp, sp = map(list, zip(*params))
    kl = float(kl_divergence(gauss(mq, sq), gauss(mp, sp)))
    assert kl >= -1e-12
    same = float(kl_divergence(gauss(mq, sq), gauss(mq, sq)))
    assert same == 0.0


def test_reparameterization_gradient_with_common_random_numbers():
    # f(z) = sum (z - c)^2, so d/dmu E f = 2 (mu - c) exactly
    g = torch.Generator().manual_seed(2)
    eps = torch.randn(100_000, 4, generator=g, dtype=torch.float64)
    c = torch.tensor([0.3, -1.0, 2.0, 0.0], dtype=torch.float64)
    mu = torch.tensor([1.0, 0.5, -0.5, 2.0], dtype=torch.float64, requires_grad=True)
    sigma = torch.tensor([0.5, 1.0, 2.0, 0.1], dtype=torch.float64, requires_grad=True)

    def objective(m, s):
        return ((sample(LatentDistribution(m, s), eps) - c) ** 2).sum(-1).mean()

    objective(mu, sigma).backward()
    h = 1e-4
    for i in range(4):
        for t in (mu, sigma):
            with torch.no_grad():
                t[i] += h
                up = float(objective(mu, sigma))
                t[i] -= 2 * h
                down = float(objective(mu, sigma))
                t[i] += h
            num = (up - down) / (2 * h)
            assert abs(float(t.grad[i]) - num) / max(abs(num), 1e-8) < 1e-3
    assert torch.allclose(mu.grad, 2 * (mu.detach() - c), rtol=0.05)


# -- parameter decoder ----------------------------------------------------------------

@pytest.mark.parametrize("block", [1, 2, 3, 4, 5])
def test_param_decoder_shapes(block):
    torch.manual_seed(0)
    fb = FeedbackNet(29, C.FeedbackConfig(injection_block=block, enc_hidden=16, z_dim=8,
                                          mlp_hidden=8, aux_hidden=8, emb_dim=8),
                     C.RecognizerConfig().channels)
    p = fb.infer_params([[3, 4, 5]])
    assert p.gamma.shape == p.omega.shape == (1, *FULL_SHAPES[block - 1])
    torch.manual_seed(0)
    fb = FeedbackNet(29, C.FeedbackConfig(injection_block=block, variant="global",
                                          enc_hidden=16, z_dim=8, mlp_hidden=8,
                                          aux_hidden=8, emb_dim=8),
                     C.RecognizerConfig().channels)
    assert fb.infer_params([[3]]).gamma.shape == (1, FULL_SHAPES[block - 1][0])


def test_param_decoder_starts_at_identity(full_fb):
    cs = Charset()
    params = full_fb.infer_params([cs.encode("hello")])
    psi = torch.randn(1, 256, 4, 25)
    assert (modulate(psi, params) - psi).abs().max() < 1e-3
    assert torch.equal(params.gamma, torch.ones_like(params.gamma))
    assert torch.equal(params.omega, torch.zeros_like(params.omega))


# -- auxiliary decoder ----------------------------------------------------------------

def test_aux_decoder_contract():
    fb = tiny_fb()
    y = fb.encode([[3, 4], [5, 6, 7]])
    z = fb.prior(y).mu
    teacher = targets_tensor([[3, 4, 5], [6]])
    logp = fb.aux_decode(y, z, teacher)
    assert logp.shape[:2] == teacher.shape
    assert torch.allclose(logp.exp().sum(-1), torch.ones(2, 4), atol=1e-6)
    free = fb.aux_decode(y, z, k_max=5)
    assert all(len(s) <= 5 for s in free)


# -- inference path -------------------------------------------------------------------

def test_inference_never_touches_posterior_or_aux():
    fb = tiny_fb()
    used = set()
    for name, module in fb.named_children():
        module.register_forward_hook(lambda m, i, o, name=name: used.add(name))
    params = fb.infer_params([[3, 4, 5]], stochastic=True,
                             generator=torch.Generator().manual_seed(0))
    assert used == {"encoder", "prior_net", "param_decoder"}
    (params.gamma.sum() + params.omega.sum()).backward()
    for name, module in (("post_net", fb.post_net), ("aux", fb.aux)):
        assert all(p.grad is None for p in module.parameters()), name


def test_deterministic_inference_is_repeatable():
    fb = tiny_fb()
    a, b = fb.infer_params([[3, 9]]), fb.infer_params([[3, 9]])
    assert torch.equal(a.gamma, b.gamma) and torch.equal(a.omega, b.omega)


def test_parameter_sets():
    model = build_model(tiny_config(), seed=0)
    t_ids = {id(p) for p in model.recognizer.parameters()}
    f_ids = {id(p) for p in model.feedback.parameters()}
    fp_ids = {id(p) for p in model.feedback.text_params()}
    pd_ids = {id(p) for p in model.feedback.param_decoder.parameters()}
    assert not t_ids & f_ids
    assert fp_ids < f_ids and not fp_ids & pd_ids and fp_ids | pd_ids == f_ids


# -- deterministic baseline -----------------------------------------------------------

def test_deterministic_feedback_baseline():
    det = tiny_fb(deterministic=True)
    cvae = tiny_fb()
    assert det.prior_net is None and det.post_net is None and det.aux is None
    assert not det.variational
    a, b = det.infer_params([[3, 4]]), det.infer_params([[3, 4]])
    assert a.gamma.shape == cvae.infer_params([[3, 4]]).gamma.shape
    assert torch.equal(a.gamma, b.gamma)
