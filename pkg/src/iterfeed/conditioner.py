"""Feature-wise affine conditioning of a backbone activation map.

Local parameters have the full map shape and modulate every position;
global parameters are per-channel and broadcast over space.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .recognizer import FeatureMap


@dataclass
class TransformParams:
    gamma: torch.Tensor
    omega: torch.Tensor
    variant: str = "local"  # local: [B, C, H, W]; global: [B, C]

    def __post_init__(self):
        if self.variant not in ("local", "global"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.gamma.shape != self.omega.shape:
            raise ValueError(f"gamma {tuple(self.gamma.shape)} and omega "
                             f"{tuple(self.omega.shape)} differ in shape")


def modulate(psi: FeatureMap | torch.Tensor, params: TransformParams):
    """psi * gamma + omega. Returns the same type it was given."""
    x = psi.values if isinstance(psi, FeatureMap) else psi
    g, o = params.gamma, params.omega
    if params.variant == "global":
        if g.dim() == 1:
            g, o = g.unsqueeze(0), o.unsqueeze(0)
        if g.shape[-1] != x.shape[1] or g.dim() != 2 or g.shape[0] not in (1, x.shape[0]):
            raise ValueError(f"global params of shape {tuple(g.shape)} do not match "
                             f"feature map of shape {tuple(x.shape)}")
        g, o = g[:, :, None, None], o[:, :, None, None]
    else:
        if g.dim() == x.dim() - 1:
            g, o = g.unsqueeze(0), o.unsqueeze(0)
        if g.shape[1:] != x.shape[1:] or g.shape[0] not in (1, x.shape[0]):
            raise ValueError(f"local params of shape {tuple(g.shape)} do not match "
                             f"feature map of shape {tuple(x.shape)}")
    out = x * g + o
    if isinstance(psi, FeatureMap):
        return FeatureMap(out, psi.block_index)
    return out


def identity_params(shape, variant: str = "local", dtype=torch.float32) -> TransformParams:
    """gamma = 1, omega = 0. ``shape`` is the map shape ([B,] C, H, W); global keeps C."""
    shape = tuple(shape)
    if variant == "global":
        c = shape[-3] if len(shape) >= 3 else shape[-1]
        lead = shape[:-3] if len(shape) >= 3 else ()
        shape = lead + (c,)
    return TransformParams(torch.ones(shape, dtype=dtype), torch.zeros(shape, dtype=dtype), variant)
