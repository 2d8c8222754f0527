"""Cross-modal feedback network: predicted text -> affine feature-map parameters.

Components:
    SequenceEncoder  shared BiLSTM encoder for predictions and ground truth
    GaussianHead     prior p(z|Y) and posterior q(z|Y, Y_hat), 2-layer tanh MLPs
    ParamDecoder     convolutional decoder [Y_enc, z] -> (Gamma, Omega)
    AuxDecoder       LSTM decoder [Y_enc, z] -> ground-truth characters
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pack_padded_sequence

from .charset import EOS, PAD, UNK
from .conditioner import TransformParams
from .config import BLOCK_SPATIAL, BLOCK_STRIDES, FeedbackConfig

SIGMA_MIN, SIGMA_MAX = 1e-6, 1e3


@dataclass
class LatentDistribution:
    mu: torch.Tensor
    sigma: torch.Tensor


def sample(dist: LatentDistribution, noise: torch.Tensor) -> torch.Tensor:
    """Reparameterized draw z = mu + sigma * noise."""
    if noise.shape[-1] != dist.mu.shape[-1]:
        raise ValueError(f"noise dim {noise.shape[-1]} != latent dim {dist.mu.shape[-1]}")
    return dist.mu + dist.sigma * noise


def kl_divergence(post: LatentDistribution, prior: LatentDistribution,
                  reduction: str = "sum") -> torch.Tensor:
    """Closed-form KL(post || prior) between diagonal Gaussians, reduced over the last dim."""
    if post.mu.shape[-1] != prior.mu.shape[-1]:
        raise ValueError("latent dimensions differ")
    if bool((post.sigma <= 0).any()) or bool((prior.sigma <= 0).any()):
        raise ValueError("sigma must be strictly positive")
    var_ratio = (post.sigma / prior.sigma) ** 2
    mean_term = ((post.mu - prior.mu) / prior.sigma) ** 2
    kl = 0.5 * (var_ratio + mean_term - 1.0) - torch.log(post.sigma / prior.sigma)
    return kl.sum(-1) if reduction == "sum" else kl.mean(-1)


class SequenceEncoder(nn.Module):
    def __init__(self, n_tokens: int, emb_dim: int, hidden: int):
        super().__init__()
        self.embedding = nn.Embedding(n_tokens, emb_dim, padding_idx=PAD)
        self.lstm = nn.LSTM(emb_dim, hidden, batch_first=True, bidirectional=True)
        self.out_dim = 2 * hidden

    def forward(self, token_seqs: list[list[int]]) -> torch.Tensor:
        """Encode each sequence (EOS appended) to [B, 2*hidden]; empty input encodes EOS only."""
        seqs = [list(s) + [EOS] for s in token_seqs]
        lengths = torch.tensor([len(s) for s in seqs])
        x = torch.full((len(seqs), int(lengths.max())), PAD, dtype=torch.long)
        for i, s in enumerate(seqs):
            x[i, :len(s)] = torch.tensor(s)
        packed = pack_padded_sequence(self.embedding(x), lengths, batch_first=True,
                                      enforce_sorted=False)
        _, (h_n, _) = self.lstm(packed)
        return torch.cat([h_n[0], h_n[1]], dim=-1)


class GaussianHead(nn.Module):
    """2-layer tanh MLP predicting (mu, log sigma)."""

    def __init__(self, in_dim: int, hidden: int, z_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, 2 * z_dim)

    def forward(self, x: torch.Tensor) -> LatentDistribution:
        mu, log_sigma = self.fc2(torch.tanh(self.fc1(x))).chunk(2, dim=-1)
        return LatentDistribution(mu, torch.exp(log_sigma).clamp(SIGMA_MIN, SIGMA_MAX))


class UpBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, scale: tuple[int, int]):
        super().__init__()
        self.scale = scale
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=self.scale, mode="nearest")
        out = self.conv2(F.relu(self.conv1(x)))
        return F.relu(out + self.skip(x))


class ParamDecoder(nn.Module):
    """[Y_enc, z] -> TransformParams at the injection block's shape.

    A 1x1 convolution maps the input vector to the last backbone block's map
    (1 x 25), then residual up-blocks undo the backbone strides in reverse
    until the injection block. The last conv has 2*C filters, split into
    Gamma (as 1 + raw) and Omega; it starts at zero so the initial output is
    the identity transform.
    """

    def __init__(self, in_dim: int, channels, injection_block: int, variant: str = "local"):
        super().__init__()
        self.injection_block = injection_block
        self.variant = variant
        h5, w5 = BLOCK_SPATIAL[4]
        self.c5, self.h5, self.w5 = channels[4], h5, w5
        self.fc = nn.Conv2d(in_dim, self.c5 * h5 * w5, 1)
        self.blocks = nn.ModuleList(
            UpBlock(channels[b - 1], channels[b - 2], BLOCK_STRIDES[b - 1])
            for b in range(5, injection_block, -1))
        c = channels[injection_block - 1]
        self.final = nn.Conv2d(c, 2 * c, 3, padding=1)
        nn.init.zeros_(self.final.weight)
        nn.init.zeros_(self.final.bias)

    def forward(self, x: torch.Tensor) -> TransformParams:
        b = x.shape[0]
        h = F.relu(self.fc(x[:, :, None, None])).view(b, self.c5, self.h5, self.w5)
        for blk in self.blocks:
            h = blk(h)
        out = self.final(h)
        if self.variant == "global":
            out = out.mean(dim=(2, 3))
        raw_gamma, omega = out.chunk(2, dim=1)
        return TransformParams(1.0 + raw_gamma, omega, self.variant)


class AuxDecoder(nn.Module):
    """One-layer LSTM decoder whose initial state comes from an FC on [Y_enc, z]."""

    def __init__(self, n_tokens: int, in_dim: int, emb_dim: int, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.init = nn.Linear(in_dim, 2 * hidden)
        self.embedding = nn.Embedding(n_tokens, emb_dim)
        self.cell = nn.LSTMCell(emb_dim, hidden)
        self.out = nn.Linear(hidden, n_tokens)
        mask = torch.zeros(n_tokens)
        mask[[PAD, UNK]] = float("-inf")
        self.register_buffer("logit_mask", mask, persistent=False)

    def _init_state(self, x):
        h, c = self.init(x).chunk(2, dim=-1)
        return torch.tanh(h), c

    def _step(self, state, y_prev):
        h, c = self.cell(self.embedding(y_prev), state)
        return torch.log_softmax(self.out(h) + self.logit_mask, dim=-1), (h, c)

    def teacher_forced(self, x: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
        state = self._init_state(x)
        y_prev = targets.new_full((targets.shape[0],), EOS)
        out = []
        for i in range(targets.shape[1]):
            logp, state = self._step(state, y_prev)
            out.append(logp)
            y_prev = targets[:, i]
        return torch.stack(out, dim=1)

    def greedy(self, x: torch.Tensor, k_max: int) -> list[list[int]]:
        state = self._init_state(x)
        b = x.shape[0]
        y_prev = torch.full((b,), EOS, dtype=torch.long)
        seqs = [[] for _ in range(b)]
        done = [False] * b
        for _ in range(k_max + 1):
            logp, state = self._step(state, y_prev)
            y_prev = logp.argmax(-1)
            for i, t in enumerate(y_prev.tolist()):
                if done[i]:
                    continue
                if t == EOS or len(seqs[i]) == k_max:
                    done[i] = True
                else:
                    seqs[i].append(t)
            if all(done):
                break
        return seqs


class FeedbackNet(nn.Module):
    """CVAE feedback module, or the deterministic baseline when ``cfg.deterministic``."""

    def __init__(self, n_tokens: int, cfg: FeedbackConfig, backbone_channels):
        super().__init__()
        self.cfg = cfg
        self.encoder = SequenceEncoder(n_tokens, cfg.emb_dim, cfg.enc_hidden)
        enc = self.encoder.out_dim
        if cfg.deterministic:
            self.prior_net = self.post_net = self.aux = None
            p_in = enc
        else:
            self.prior_net = GaussianHead(enc, cfg.mlp_hidden, cfg.z_dim)
            self.post_net = GaussianHead(2 * enc, cfg.mlp_hidden, cfg.z_dim)
            self.aux = AuxDecoder(n_tokens, enc + cfg.z_dim, cfg.emb_dim, cfg.aux_hidden)
            p_in = enc + cfg.z_dim
        self.param_decoder = ParamDecoder(p_in, backbone_channels, cfg.injection_block,
                                          cfg.variant)

    @property
    def variational(self) -> bool:
        return not self.cfg.deterministic

    def encode(self, token_seqs: list[list[int]]) -> torch.Tensor:
        return self.encoder(token_seqs)

    def prior(self, y_enc: torch.Tensor) -> LatentDistribution:
        return self.prior_net(y_enc)

    def posterior(self, y_enc: torch.Tensor, yhat_enc: torch.Tensor) -> LatentDistribution:
        return self.post_net(torch.cat([y_enc, yhat_enc], dim=-1))

    def predict_params(self, y_enc: torch.Tensor, z: torch.Tensor | None) -> TransformParams:
        x = y_enc if z is None else torch.cat([y_enc, z], dim=-1)
        return self.param_decoder(x)

    def aux_decode(self, y_enc, z, teacher: torch.Tensor | None = None, k_max: int = 12):
        """Teacher-forced log-probs [B, K, C] if ``teacher`` is given, else greedy token lists."""
        x = torch.cat([y_enc, z], dim=-1)
        if teacher is not None:
            return self.aux.teacher_forced(x, teacher)
        return self.aux.greedy(x, k_max)

    def infer_params(self, token_seqs, stochastic: bool = False,
                     generator: torch.Generator | None = None) -> TransformParams:
        """Inference path: encoder -> prior -> z -> F_P. Never touches posterior or aux."""
        y_enc = self.encode(token_seqs)
        if not self.variational:
            return self.predict_params(y_enc, None)
        prior = self.prior(y_enc)
        if stochastic:
            noise = torch.randn(prior.mu.shape, generator=generator, dtype=prior.mu.dtype)
            z = sample(prior, noise)
        else:
            z = prior.mu
        return self.predict_params(y_enc, z)

    def text_params(self) -> list[nn.Parameter]:
        """theta_F': everything except the parameter decoder."""
        skip = {id(p) for p in self.param_decoder.parameters()}
        return [p for p in self.parameters() if id(p) not in skip]
