import copy
import json

import numpy as np
import pytest
import torch

from iterfeed import config as C
from iterfeed.charset import EOS, PAD
from iterfeed.model import build_model
from iterfeed.harness import (AblationCell, ablation_run, ablation_table, block_grid,
                              evaluate, iterative_infer, length_bucket, plot_report,
                              pretrain_recognizer, train_from_pretrained,
                              timing_report, timing_table, toggle_grid, wra)
from iterfeed.wordgen import build_split

from conftest import randomize_param_decoder, tiny_config, tiny_train_config

WORDS = ["a", "to", "cat", "bird", "mouse", "horses", "giraffe", "elephant", "crocodile",
         "hippopotamus"]


@pytest.fixture(scope="module")
def split():
    return build_split(WORDS, mode="ds", train_fraction=0.6, instances_per_word=2, seed=0)


def test_wra_examples():
    assert wra(["cat", "dog"], ["cat", "cot"]) == 50.0
    assert wra([[3, 4, EOS, PAD], [5]], [[3, 4], [6]]) == 50.0
    assert wra([""], [""]) == 100.0
    with pytest.raises(ValueError):
        wra([], [])
    with pytest.raises(ValueError):
        wra(["a"], ["a", "b"])


def test_length_buckets():
    assert [length_bucket(n) for n in (1, 3, 4, 6, 7, 9, 10, 12)] == [
        "1-3", "1-3", "4-6", "4-6", "7-9", "7-9", "10+", "10+"]
    with pytest.raises(ValueError):
        length_bucket(0)


def test_t0_is_a_plain_forward_pass(split):
    model = build_model(tiny_config(), seed=0)
    imgs = np.stack([s.image for s in split.test])
    traces = iterative_infer(model, imgs, T=0)
    rec = model.recognizer.eval()
    plain = rec.recognize(rec.head(rec.encode_backbone(torch.from_numpy(imgs)[:, None], 5)))
    assert [tr.predictions[0] for tr in traces] == [model.charset.decode(p) for p in plain]
    assert all(len(tr.predictions) == 1 for tr in traces)
    with pytest.raises(ValueError):
        iterative_infer(model, imgs, T=-1)


def test_identity_feedback_changes_nothing(split):
    model = build_model(tiny_config(), seed=0)
    traces = iterative_infer(model, np.stack([s.image for s in split.test]), T=3,
                             truths=[s.label for s in split.test])
    for tr in traces:
        assert len(set(tr.predictions)) == 1
        assert tr.ce[0] == tr.ce[3]


def test_deterministic_inference_repeats(split):
    cfg = tiny_config(stochastic_inference=True)
    model = randomize_param_decoder(build_model(cfg, seed=0), 0.5)
    imgs = np.stack([s.image for s in split.test])
    a = [tr.predictions for tr in iterative_infer(model, imgs, 2)]
    assert a == [tr.predictions for tr in iterative_infer(model, imgs, 2)]
    g1, g2 = torch.Generator().manual_seed(1), torch.Generator().manual_seed(1)
    s1 = iterative_infer(model, imgs, 2, deterministic_z=False, truths=None, generator=g1)
    s2 = iterative_infer(model, imgs, 2, deterministic_z=False, truths=None, generator=g2)
    assert [t.predictions for t in s1] == [t.predictions for t in s2]


def test_evaluate_report(split):
    model = build_model(tiny_config(), seed=0)
    rep = evaluate(model, split.test, t_max=2, mode="ds", batch_size=3)
    assert rep.n == len(split.test) and len(rep.wra) == 3 and rep.t_max == 2
    assert rep.relative_gain == rep.wra[2] - rep.wra[0]
    assert sum(b["count"] for b in rep.buckets.values()) == len(split.test)
    counts = {}
    for s in split.test:
        counts[length_bucket(len(s.label))] = counts.get(length_bucket(len(s.label)), 0) + 1
    assert {k: b["count"] for k, b in rep.buckets.items() if b["count"]} == counts
    assert all(len(p) == len(split.test) for p in rep.predictions)
    d = rep.to_dict()
    assert "predictions" not in d and json.loads(json.dumps(d)) == d
    assert "relative gain" in rep.table()
    assert evaluate(model, split.test, 1).relative_gain == pytest.approx(
        evaluate(model, split.test, 1).wra[1] - evaluate(model, split.test, 1).wra[0])


def test_timing_report(split):
    model = build_model(C.small_model_config(), seed=0)
    rep = timing_report(model, split.train, n_samples=4)
    p = rep["params"]
    assert p["T_A"] + p["T_B"] == p["T"] and p["F"] > 0
    it = rep["iterations_ms"]
    assert it["t=0"] < it["t=1"] < it["t=2"]
    assert all(v > 0 for v in rep["cpu_ms"].values())
    assert "T_A" in timing_table(rep)
    with pytest.raises(ValueError):
        timing_report(model, [], 4)


def test_grids():
    blocks = block_grid()
    assert len(blocks) == 10 and len(set(blocks)) == 10
    toggles = toggle_grid()
    assert [(c.use_lc, c.use_aux, c.use_G) for c in toggles] == [
        (True, False, False), (False, True, True), (True, True, False), (True, True, True)]
    with pytest.raises(ValueError):
        AblationCell(injection_block=6)
    with pytest.raises(ValueError):
        AblationCell(variant="channel")


def test_ablation_run_is_well_formed(split):
    from iterfeed.errorcorpus import synthesize_errors
    from iterfeed.glyphs import DEFAULT_CONFUSIONS

    G = synthesize_errors(sorted(split.labels("train")), DEFAULT_CONFUSIONS, 2)
    tcfg = tiny_train_config(warmup_T=2, warmup_F_textonly=1, warmup_F_full=1, joint=1)
    seen = []
    rows = ablation_run(block_grid() + toggle_grid(), split, G, tiny_config(), tcfg,
                        progress=lambda c, r: seen.append(c))
    assert len(rows) == 14 and len(seen) == 14
    for r in rows:
        assert len(r["report"]["wra"]) == 3 and r["report"]["n"] == len(split.test)
    table = ablation_table(rows)
    assert len(table.splitlines()) == 16


def test_shared_snapshot_matches_scratch_and_is_not_mutated(split):
    from iterfeed.errorcorpus import synthesize_errors
    from iterfeed.glyphs import DEFAULT_CONFUSIONS
    from iterfeed.model import state_digest
    from iterfeed.training import Trainer, TrainData

    G = synthesize_errors(sorted(split.labels("train")), DEFAULT_CONFUSIONS, 2)
    tcfg = tiny_train_config(warmup_T=3, warmup_F_textonly=2, warmup_F_full=2, joint=3)
    snap = pretrain_recognizer(tiny_config(), tcfg, split.train_all)
    frozen = copy.deepcopy(snap)

    first = train_from_pretrained(tiny_config(), tcfg, snap, split.train_all, G)
    second = train_from_pretrained(tiny_config(), tcfg, snap, split.train_all, G)
    assert state_digest(first) == state_digest(second)
    for a, b in zip(torch.utils._pytree.tree_leaves(snap), torch.utils._pytree.tree_leaves(frozen)):
        assert (torch.equal(a, b) if torch.is_tensor(a) else a == b)

    scratch = build_model(tiny_config(), seed=tcfg.seed)
    Trainer(scratch, tcfg).run(TrainData.build(scratch, split.train_all, G))
    assert state_digest(scratch) == state_digest(first)


def test_plot(tmp_path, split):
    rep = evaluate(build_model(tiny_config(), seed=0), split.test, 2).to_dict()
    out = tmp_path / "wra.png"
    plot_report(rep, out)
    assert out.stat().st_size > 1000
