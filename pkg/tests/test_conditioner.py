import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from iterfeed.conditioner import TransformParams, identity_params, modulate
from iterfeed.recognizer import FeatureMap

SHAPES = [(64, 16, 50), (128, 8, 25), (256, 4, 25), (256, 2, 25), (256, 1, 25)]


@pytest.mark.parametrize("shape", SHAPES)
def test_identity_is_exact(shape):
    psi = torch.randn(2, *shape)
    assert torch.equal(modulate(psi, identity_params(psi.shape)), psi)
    assert torch.equal(modulate(psi, identity_params(psi.shape, "global")), psi)


def test_zero_gain_constant_shift():
    psi = torch.randn(1, 8, 4, 25)
    out = modulate(psi, TransformParams(torch.zeros_like(psi), torch.full_like(psi, 0.7)))
    assert torch.equal(out, torch.full_like(psi, 0.7))


def test_triple_loop_oracle():
    g = torch.Generator().manual_seed(0)
    psi, gam, om = (torch.randn(256, 4, 25, generator=g, dtype=torch.float64) for _ in range(3))
    out = modulate(psi, TransformParams(gam, om)).numpy()
    p, a, b = psi.numpy(), gam.numpy(), om.numpy()
    ref = np.empty_like(p)
    for c in range(256):
        for h in range(4):
            for w in range(25):
                ref[c, h, w] = p[c, h, w] * a[c, h, w] + b[c, h, w]
    assert np.abs(out - ref).max() <= 1e-12


def test_feature_map_in_feature_map_out():
    fmap = FeatureMap(torch.randn(1, 4, 2, 25), 4)
    out = modulate(fmap, identity_params(fmap.values.shape))
    assert isinstance(out, FeatureMap) and out.block_index == 4


def test_shape_mismatch_names_both_shapes():
    psi = torch.randn(1, 8, 4, 25)
    with pytest.raises(ValueError, match=r"\(1, 8, 2, 25\).*\(1, 8, 4, 25\)"):
        modulate(psi, identity_params((1, 8, 2, 25)))
    with pytest.raises(ValueError):
        modulate(psi, TransformParams(torch.ones(1, 7), torch.zeros(1, 7), "global"))
    with pytest.raises(ValueError):
        TransformParams(torch.ones(3), torch.zeros(4), "global")
    with pytest.raises(ValueError):
        TransformParams(torch.ones(3), torch.zeros(3), "spatial")


def test_identity_params_global_length():
    p = identity_params((2, 48, 4, 25), "global")
    assert p.gamma.shape == (2, 48)
    twice = modulate(modulate(torch.ones(2, 48, 4, 25), p), p)
    assert torch.equal(twice, torch.ones(2, 48, 4, 25))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    g = torch.Generator().manual_seed(seed)
    p1, p2, gam = (torch.randn(2, 8, 4, 25, generator=g, dtype=torch.float64) for _ in range(3))
    params = TransformParams(gam, torch.zeros_like(gam))
    lhs = modulate(a * p1 + b * p2, params)
    rhs = a * modulate(p1, params) + b * modulate(p2, params)
    assert torch.allclose(lhs, rhs, atol=1e-8, rtol=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_global_equals_channel_constant_local(seed):
    g = torch.Generator().manual_seed(seed)
    psi = torch.randn(2, 8, 4, 25, generator=g)
    gam, om = torch.randn(2, 8, generator=g), torch.randn(2, 8, generator=g)
    glob = modulate(psi, TransformParams(gam, om, "global"))
    loc = modulate(psi, TransformParams(gam[:, :, None, None].expand_as(psi).contiguous(),
                                        om[:, :, None, None].expand_as(psi).contiguous()))
    assert torch.equal(glob, loc)


def test_gradient_matches_finite_differences():
    g = torch.Generator().manual_seed(3)
    psi = torch.randn(1, 4, 2, 5, generator=g, dtype=torch.float64)
    gam = torch.randn(1, 4, 2, 5, generator=g, dtype=torch.float64, requires_grad=True)
    om = torch.randn(1, 4, 2, 5, generator=g, dtype=torch.float64, requires_grad=True)

    def loss(a, b):
        return (modulate(psi, TransformParams(a, b)) ** 2).sum()

    loss(gam, om).backward()
    for t in (gam, om):
        for k in range(t.numel()):
            with torch.no_grad():
                flat = t.view(-1)
                orig = float(flat[k])
                flat[k] = orig + 1e-5
                up = float(loss(gam, om))
                flat[k] = orig - 1e-5
                down = float(loss(gam, om))
                flat[k] = orig
            num = (up - down) / 2e-5
            ana = float(t.grad.view(-1)[k])
            assert abs(ana - num) / max(abs(ana), abs(num), 1e-8) < 1e-6
