"""Answer-space validity and head selection tests."""

import numpy as np
import pytest
import torch

from netadapt.errors import ConfigError
from netadapt.heads import ABRHead, AnswerSpace, CJSHeads, VPHead, first_argmax

TOY_LADDER = (750, 2850, 4300)
FULL_LADDER = (300, 750, 1200, 1850, 2850, 4300)


def gen(seed=0):
    return torch.Generator().manual_seed(seed)


# -- answer spaces -----------------------------------------------------------

def test_abr_space_requires_increasing_ladder():
    with pytest.raises(ConfigError):
        AnswerSpace.for_abr((750, 750, 4300))
    with pytest.raises(ConfigError):
        AnswerSpace.for_abr(())


def test_cjs_space_levels_within_total():
    with pytest.raises(ConfigError):
        AnswerSpace.for_cjs(max_stages=4, total_executors=3, executor_levels=(1, 5))
    space = AnswerSpace.for_cjs(max_stages=4, total_executors=3)
    assert space.executor_levels == (1, 2, 3)


def test_vp_space_requires_positive_horizon():
    with pytest.raises(ConfigError):
        AnswerSpace.for_vp(horizon=0)


# -- VP head ------------------------------------------------------------------

def test_vp_head_emits_full_horizon_in_one_map():
    # pw=4s at 5Hz -> H=20 future samples -> 60 outputs
    space = AnswerSpace.for_vp(horizon=20)
    head = VPHead(model_dim=32, space=space, generator=gen())
    out = head(torch.rand(32, generator=gen(1)))
    assert out.shape == (20, 3)
    assert head.weight.shape == (32, 60)


def test_vp_head_zero_weights_zero_prediction():
    space = AnswerSpace.for_vp(horizon=4)
    head = VPHead(model_dim=8, space=space, generator=gen())
    with torch.no_grad():
        head.weight.zero_()
        head.bias.zero_()
    out = head(torch.rand(8, generator=gen(2)))
    assert torch.equal(out, torch.zeros(4, 3))


def test_vp_head_horizon_mismatch_rejected():
    space = AnswerSpace.for_vp(horizon=4)
    head = VPHead(model_dim=8, space=space, generator=gen())
    with pytest.raises(ConfigError):
        head.check_horizon(20)


def test_vp_head_batched():
    space = AnswerSpace.for_vp(horizon=5)
    head = VPHead(model_dim=8, space=space, generator=gen())
    out = head(torch.rand(7, 8, generator=gen(3)))
    assert out.shape == (7, 5, 3)


# -- ABR head ------------------------------------------------------------------

def test_abr_head_toy_ladder_three_entries():
    space = AnswerSpace.for_abr(TOY_LADDER)
    head = ABRHead(model_dim=16, space=space, generator=gen())
    probs = head(torch.rand(16, generator=gen(4)))
    assert probs.shape == (3,)
    assert probs.sum().item() == pytest.approx(1.0, abs=1e-6)
    assert (probs >= 0).all()


def test_abr_uniform_logits_tie_breaks_low():
    space = AnswerSpace.for_abr(TOY_LADDER)
    head = ABRHead(model_dim=16, space=space, generator=gen())
    with torch.no_grad():
        head.weight.zero_()
        head.bias.zero_()
    idx, kbps, probs = head.select(torch.rand(16, generator=gen(5)))
    assert torch.allclose(probs, torch.full((3,), 1 / 3))
    assert idx == 0 and kbps == 750


def test_abr_argmax_invariant_to_constant_logit_shift():
    space = AnswerSpace.for_abr(FULL_LADDER)
    head = ABRHead(model_dim=16, space=space, generator=gen(6))
    f = torch.rand(16, generator=gen(7))
    idx1 = head.select(f)[0]
    with torch.no_grad():
        head.bias.add_(3.5)
    idx2 = head.select(f)[0]
    assert idx1 == idx2


def test_abr_validity_exhaustive():
    space = AnswerSpace.for_abr(FULL_LADDER)
    head = ABRHead(model_dim=16, space=space, generator=gen(8))
    g = gen(9)
    feats = torch.randn(10_000, 16, generator=g) * 5
    probs = head(feats)
    assert torch.allclose(probs.sum(-1), torch.ones(10_000), atol=1e-6)
    picks = probs.argmax(-1)
    assert ((picks >= 0) & (picks < len(FULL_LADDER))).all()
    # spot-check the scalar path agrees with the batched argmax
    for i in range(0, 10_000, 997):
        idx, kbps, _ = head.select(feats[i])
        assert kbps == FULL_LADDER[idx]


# -- CJS heads ------------------------------------------------------------------

def cjs_heads(seed=0, levels=(1, 2, 3, 4, 5)):
    space = AnswerSpace.for_cjs(max_stages=16, total_executors=max(levels),
                                executor_levels=levels)
    return CJSHeads(model_dim=12, node_width=6, space=space, generator=gen(seed))


def test_cjs_single_runnable_stage_always_selected():
    heads = cjs_heads()
    g = gen(10)
    for trial in range(20):
        n = 5
        nodes = torch.randn(n, 6, generator=g)
        ctx = torch.randn(12, generator=g)
        mask = [False] * n
        mask[trial % n] = True
        assert heads.select_stage(nodes, ctx, mask) == trial % n


def test_cjs_hand_scores_pick_higher():
    heads = cjs_heads()
    # force the scorer to read a single node coordinate: score = node_feat[0]
    with torch.no_grad():
        heads.stage_w1.zero_()
        heads.stage_b1.zero_()
        heads.stage_w1[0, 0] = 1.0
        heads.stage_w2.zero_()
        heads.stage_w2[0, 0] = 1.0
        heads.stage_b2.zero_()
    nodes = torch.zeros(2, 6)
    nodes[0, 0] = 0.2
    nodes[1, 0] = 0.9
    ctx = torch.zeros(12)
    assert heads.select_stage(nodes, ctx, [True, True]) == 1


def test_cjs_non_runnable_never_selected():
    heads = cjs_heads(3)
    g = gen(11)
    for _ in range(200):
        n = int(torch.randint(1, 8, (1,), generator=g))
        nodes = torch.randn(n, 6, generator=g) * 3
        ctx = torch.randn(12, generator=g)
        mask = torch.rand(n, generator=g) < 0.5
        choice = heads.select_stage(nodes, ctx, mask.tolist())
        if not mask.any():
            assert choice is None
        else:
            assert mask[choice]


def test_cjs_executor_levels_valid_exhaustive():
    levels = (1, 2, 4, 8)
    heads = cjs_heads(5, levels=levels)
    g = gen(12)
    for _ in range(10_000):
        idx, count = heads.select_executors(torch.randn(12, generator=g) * 4)
        assert count == levels[idx]
        assert count in levels


def test_cjs_idle_is_signal_not_exception():
    heads = cjs_heads()
    assert heads.select_stage(torch.zeros(3, 6), torch.zeros(12),
                              [False, False, False]) is None


def test_first_argmax_tie_goes_low():
    assert first_argmax(torch.tensor([1.0, 3.0, 3.0, 2.0])) == 1
    assert first_argmax(torch.tensor([0.5, 0.5])) == 0
