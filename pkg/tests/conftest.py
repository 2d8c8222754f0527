import dataclasses

import pytest
import torch

from iterfeed import config as C
from iterfeed.model import build_model


def tiny_config(symbols="abcdefghijklmnopqrstuvwxyz", **feedback) -> C.ModelConfig:
    """Very narrow model with the standard block schedule, for fast checks."""
    return C.ModelConfig(
        symbols=tuple(symbols),
        recognizer=C.RecognizerConfig(channels=(4, 8, 8, 8, 8), lstm_hidden=8, dec_hidden=12,
                                      attn_dim=8, emb_dim=6),
        feedback=C.FeedbackConfig(emb_dim=6, enc_hidden=8, z_dim=4, mlp_hidden=8,
                                  aux_hidden=8, **feedback),
    )


def tiny_train_config(**kw) -> C.TrainConfig:
    base = dict(batch_size=8, warmup_T=0, warmup_F_textonly=0, warmup_F_full=0, joint=0,
                log_every=1)
    base.update(kw)
    return C.TrainConfig(**base)


@pytest.fixture
def tiny_model():
    return build_model(tiny_config(), seed=0)


def randomize_param_decoder(model, scale=0.05, seed=0):
    """Move F_P's zero-initialized last layer off the identity."""
    g = torch.Generator().manual_seed(seed)
    final = model.feedback.param_decoder.final
    with torch.no_grad():
        final.weight.copy_(torch.randn(final.weight.shape, generator=g) * scale)
        final.bias.copy_(torch.randn(final.bias.shape, generator=g) * scale)
    return model


def replace(cfg, **kw):
    return dataclasses.replace(cfg, **kw)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def fd_check(monkeypatch, params, loss_fn, frac=0.01, h=1e-3, tol=1e-4, atol=1e-10, seed=1):
    """Central differences on about ``frac`` of every tensor in ``params``.

    ``loss_fn`` returns a scalar whose ``.backward()`` must already have filled
    ``p.grad``. ReLU is not differentiable at 0: entries whose +-h perturbation
    flips the sign of any ReLU input are skipped and counted. Entries whose
    gradient is so small that the difference is below ``atol`` count as
    matching, since O(h^2) truncation dominates there. Returns
    ``(checked, skipped)``.
    """
    relu_f, relu_t = torch.nn.functional.relu, torch.relu
    signs: list[torch.Tensor] = []

    def rec_f(t, inplace=False):
        signs.append(t.detach() > 0)
        return relu_f(t)

    def rec_t(t):
        signs.append(t.detach() > 0)
        return relu_t(t)

    monkeypatch.setattr(torch.nn.functional, "relu", rec_f)
    monkeypatch.setattr(torch, "relu", rec_t)

    def run():
        signs.clear()
        v = loss_fn()
        return v, list(signs)

    total, base = run()
    for p in params:
        p.grad = None
    total.backward()
    g = torch.Generator().manual_seed(seed)
    checked = skipped = 0
    with torch.no_grad():
        for p in params:
            if p.grad is None:
                raise AssertionError(f"no gradient for parameter of shape {tuple(p.shape)}")
            n = max(1, int(p.numel() * frac))
            for k in torch.randint(0, p.numel(), (n,), generator=g).tolist():
                flat = p.data.view(-1)
                orig = float(flat[k])
                flat[k] = orig + h
                up, s_up = run()
                flat[k] = orig - h
                down, s_down = run()
                flat[k] = orig
                if any(not torch.equal(a, b) or not torch.equal(a, c)
                       for a, b, c in zip(base, s_up, s_down)):
                    skipped += 1
                    continue
                num = (float(up) - float(down)) / (2 * h)
                ana = float(p.grad.view(-1)[k])
                assert rel_err(ana, num) < tol or abs(ana - num) < atol, (tuple(p.shape), k, ana, num)
                checked += 1
    return checked, skipped


# criterion number -> one-line verdict, printed at the end of the session
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
