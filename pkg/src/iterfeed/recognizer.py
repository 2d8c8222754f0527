"""Attention encoder-decoder recognizer split at a configurable backbone block.

``encode_backbone(images, j)`` is the prefix T_A (blocks 1..j);
``continue_backbone(fmap)`` runs the remaining blocks, and
``encode_sequence`` + the attention decoder finish T_B. Feature maps are
kept channels-first ``[B, C, H, W]`` internally; ``FeatureMap.hwc`` gives the
``H x W x C`` view used in the block table.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .charset import EOS, N_SPECIAL, PAD, UNK
from .config import BLOCK_SPATIAL, BLOCK_STRIDES, IMAGE_HEIGHT, IMAGE_WIDTH, RecognizerConfig

NEG_INF = float("-inf")


@dataclass
class FeatureMap:
    values: torch.Tensor  # [B, C, H, W]
    block_index: int

    @property
    def hwc(self) -> tuple[int, int, int]:
        _, c, h, w = self.values.shape
        return h, w, c


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: tuple[int, int]):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.shortcut = nn.Sequential(
            nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False), nn.BatchNorm2d(c_out))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


def block_shape(block: int, channels) -> tuple[int, int, int]:
    """(H, W, C) of backbone block ``block`` (1-based) for a 32x100 input."""
    h, w = BLOCK_SPATIAL[block - 1]
    return h, w, channels[block - 1]


class Backbone(nn.Module):
    def __init__(self, channels):
        super().__init__()
        if len(channels) != 5:
            raise ValueError("backbone needs exactly 5 channel widths")
        c_in = [1] + list(channels[:-1])
        self.blocks = nn.ModuleList(
            ResidualBlock(ci, co, s) for ci, co, s in zip(c_in, channels, BLOCK_STRIDES))


class AttentionDecoder(nn.Module):
    """Single-layer LSTM decoder with additive attention over an encoded sequence.

    score_i = v^T tanh(W_s s + W_h h_i + b_a); the LSTM consumes
    [glimpse, E(y_prev)] and the output head maps its hidden state to logits.
    """

    def __init__(self, n_tokens: int, enc_dim: int, hidden: int, attn_dim: int, emb_dim: int,
                 masked_tokens=(PAD, UNK)):
        super().__init__()
        self.n_tokens = n_tokens
        self.hidden = hidden
        self.embedding = nn.Embedding(n_tokens, emb_dim)
        self.W_s = nn.Linear(hidden, attn_dim, bias=False)
        self.W_h = nn.Linear(enc_dim, attn_dim, bias=True)  # bias is b_a
        self.v = nn.Linear(attn_dim, 1, bias=False)
        self.cell = nn.LSTMCell(enc_dim + emb_dim, hidden)
        self.out = nn.Linear(hidden, n_tokens)
        mask = torch.zeros(n_tokens)
        mask[list(masked_tokens)] = NEG_INF
        self.register_buffer("logit_mask", mask, persistent=False)

    def initial_state(self, batch: int, ref: torch.Tensor):
        z = ref.new_zeros(batch, self.hidden)
        return z, z.clone()

    def scores(self, s_prev: torch.Tensor, H: torch.Tensor, H_proj: torch.Tensor | None = None):
        if H_proj is None:
            H_proj = self.W_h(H)
        return self.v(torch.tanh(self.W_s(s_prev).unsqueeze(1) + H_proj)).squeeze(-1)

    def attend(self, s_prev: torch.Tensor, H: torch.Tensor, H_proj: torch.Tensor | None = None):
        """Returns (glimpse [B, D], weights [B, L])."""
        alpha = torch.softmax(self.scores(s_prev, H, H_proj), dim=-1)
        g = torch.bmm(alpha.unsqueeze(1), H).squeeze(1)
        return g, alpha

    def step(self, state, H, y_prev: torch.Tensor, H_proj=None):
        """One decode step -> (log-probs [B, C], new state, attention weights)."""
        if y_prev.min() < 0 or y_prev.max() >= self.n_tokens:
            raise ValueError(f"token out of range [0, {self.n_tokens})")
        h, c = state
        g, alpha = self.attend(h, H, H_proj)
        h, c = self.cell(torch.cat([g, self.embedding(y_prev)], dim=-1), (h, c))
        logits = self.out(h) + self.logit_mask
        return torch.log_softmax(logits, dim=-1), (h, c), alpha

    def teacher_forced(self, H: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
        """Log-probs [B, K, C] for targets [B, K] (targets end in EOS, padded with PAD)."""
        b, k = targets.shape
        state = self.initial_state(b, H)
        H_proj = self.W_h(H)
        y_prev = targets.new_full((b,), EOS)
        out = []
        for i in range(k):
            logp, state, _ = self.step(state, H, y_prev, H_proj)
            out.append(logp)
            y_prev = targets[:, i].clamp(min=0)
        return torch.stack(out, dim=1)

    def greedy(self, H: torch.Tensor, k_max: int) -> list[list[int]]:
        b = H.shape[0]
        state = self.initial_state(b, H)
        H_proj = self.W_h(H)
        y_prev = torch.full((b,), EOS, dtype=torch.long, device=H.device)
        seqs: list[list[int]] = [[] for _ in range(b)]
        done = [False] * b
        for _ in range(k_max + 1):
            logp, state, _ = self.step(state, H, y_prev, H_proj)
            y_prev = logp.argmax(dim=-1)  # first maximal index on ties
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

    def beam_search(self, H: torch.Tensor, width: int, top_n: int, k_max: int,
                    min_length: int = 0) -> list[tuple[list[int], float]]:
        """Beam search for one sample (H is [1, L, D]).

        Hypotheses are scored by summed log-probability including the final
        EOS, with no length normalization. A hypothesis reaching ``k_max``
        symbols is closed with the EOS log-prob of the next step.

        The ``width`` slots hold live hypotheses only. A finished candidate is
        dropped only when symbol extensions were pruned at that step and it
        scores below the weakest surviving one; so width 1 reproduces greedy
        decoding, and a search that never prunes returns exact top-n.
        """
        if width < 1:
            raise ValueError("beam width must be >= 1")
        if not 1 <= top_n <= width:
            raise ValueError("top_n must satisfy 1 <= top_n <= width")
        H_proj = self.W_h(H)
        beams = [([], 0.0, self.initial_state(1, H))]
        finished: list[tuple[list[int], float]] = []
        while beams:
            n = len(beams)
            hs = torch.cat([s[0] for _, _, s in beams])
            cs = torch.cat([s[1] for _, _, s in beams])
            y_prev = torch.tensor([seq[-1] if seq else EOS for seq, _, _ in beams])
            logp, (h, c), _ = self.step((hs, cs), H.expand(n, -1, -1), y_prev,
                                        H_proj.expand(n, -1, -1))
            logp = logp.double().tolist()
            ends, exts = [], []
            for i, (seq, score, _) in enumerate(beams):
                for t in range(self.n_tokens):
                    lp = logp[i][t]
                    if lp == NEG_INF:
                        continue
                    if t == EOS:
                        if len(seq) >= min_length:
                            ends.append((score + lp, i))
                    elif t >= N_SPECIAL and len(seq) < k_max:
                        exts.append((score + lp, i, t))
            # stable sorts keep (beam order, token order) on ties: lowest index wins
            exts.sort(key=lambda x: -x[0])
            kept = exts[:width]
            floor = kept[-1][0] if len(exts) > width else NEG_INF
            finished.extend((beams[i][0], sc) for sc, i in ends if sc >= floor)
            beams = [(beams[i][0] + [t], sc, (h[i:i + 1], c[i:i + 1])) for sc, i, t in kept]
            # scores only decrease, so live beams below the n-th finished score are dead
            if len(finished) >= top_n and beams:
                nth = sorted((sc for _, sc in finished), reverse=True)[top_n - 1]
                if beams[0][1] < nth:
                    break
        finished.sort(key=lambda x: -x[1])
        return finished[:top_n]


class Recognizer(nn.Module):
    def __init__(self, n_tokens: int, cfg: RecognizerConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or RecognizerConfig()
        self.n_tokens = n_tokens
        self.backbone = Backbone(cfg.channels)
        self.encoder = nn.LSTM(cfg.channels[-1], cfg.lstm_hidden, batch_first=True,
                               bidirectional=True)
        self.decoder = AttentionDecoder(n_tokens, 2 * cfg.lstm_hidden, cfg.dec_hidden,
                                        cfg.attn_dim, cfg.emb_dim)

    # -- T_A / T_B split -------------------------------------------------
    def encode_backbone(self, images: torch.Tensor, upto_block: int) -> FeatureMap:
        if not 1 <= upto_block <= 5:
            raise ValueError(f"upto_block must be in 1..5, got {upto_block}")
        x = _as_batch(images)
        for blk in self.backbone.blocks[:upto_block]:
            x = blk(x)
        return FeatureMap(x, upto_block)

    def continue_backbone(self, fmap: FeatureMap) -> torch.Tensor:
        """Remaining blocks, then reshape to a sequence [B, L, D] with L = H' x W'."""
        if not 1 <= fmap.block_index <= 5:
            raise ValueError(f"bad block index {fmap.block_index}")
        x = fmap.values
        for blk in self.backbone.blocks[fmap.block_index:]:
            x = blk(x)
        b, d, h, w = x.shape
        return x.permute(0, 2, 3, 1).reshape(b, h * w, d)

    def encode_sequence(self, B: torch.Tensor) -> torch.Tensor:
        if B.shape[1] == 0:
            raise ValueError("empty feature sequence")
        H, _ = self.encoder(B)
        return H

    def head(self, fmap: FeatureMap) -> torch.Tensor:
        """T_B up to the encoded sequence H."""
        return self.encode_sequence(self.continue_backbone(fmap))

    # -- decoding ----------------------------------------------------------
    def forward(self, images: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
        H = self.head(self.encode_backbone(images, 5))
        return self.decoder.teacher_forced(H, targets)

    def recognize(self, H: torch.Tensor) -> list[list[int]]:
        return self.decoder.greedy(H, self.cfg.k_max)

    def beam_search(self, H: torch.Tensor, width: int, top_n: int, min_length: int = 0):
        return self.decoder.beam_search(H, width, top_n, self.cfg.k_max, min_length)

    def block_params(self, upto_block: int) -> tuple[list[nn.Parameter], list[nn.Parameter]]:
        """Split parameters into the T_A side (blocks 1..j) and everything else."""
        ta = [p for blk in self.backbone.blocks[:upto_block] for p in blk.parameters()]
        ids = {id(p) for p in ta}
        return ta, [p for p in self.parameters() if id(p) not in ids]


def _as_batch(images: torch.Tensor) -> torch.Tensor:
    if images.dim() == 2:
        images = images.unsqueeze(0)
    if images.dim() == 3:
        images = images.unsqueeze(1)
    if images.dim() != 4 or tuple(images.shape[1:]) != (1, IMAGE_HEIGHT, IMAGE_WIDTH):
        raise ValueError(
            f"expected images of shape [B, 1, {IMAGE_HEIGHT}, {IMAGE_WIDTH}], got {tuple(images.shape)}")
    return images


def targets_tensor(token_seqs: list[list[int]]) -> torch.Tensor:
    """Pad token sequences, appending EOS to each: [B, max_len + 1]."""
    k = max(len(s) for s in token_seqs) + 1
    out = torch.full((len(token_seqs), k), PAD, dtype=torch.long)
    for i, s in enumerate(token_seqs):
        out[i, :len(s)] = torch.tensor(s, dtype=torch.long)
        out[i, len(s)] = EOS
    return out
