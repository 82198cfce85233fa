import math
from types import SimpleNamespace

import numpy as np
import pytest
from conftest import central_diff_max_rel_err

from stma.blocks import zero_encoder_layer
from stma.config import AblationMode, ModelConfig
from stma.errors import ConfigError
from stma.fusion import (
    FusionParams,
    classify,
    init_fusion_params,
    self_attention_fusion,
    visual_semantic_attention,
)
from stma.model import (
    forward_trace,
    init_params,
    param_table,
    stma_forward,
    trainable_parameters,
)
from stma.tensor import (
    GradGraph,
    Tensor,
    grad_check,
    log,
    mul,
    narrow,
    pause_recording,
    scale,
    sum_all,
)

RNG = np.random.default_rng(55)


def tiny_fusion(d=8, std=0.15, mode="cls"):
    return init_fusion_params(d, 2 * d, 2, np.random.default_rng(2),
                              text_pool_mode=mode, std=std)


def tiny_cfg(**kw):
    base = dict(embed_dim=8, num_heads=2, num_layers=2, mlp_ratio=2,
                image_hw=(32, 32), vocab_size=10, max_len=6)
    base.update(kw)
    return ModelConfig(**base)


def tiny_sample(cfg, seed=0, label=1):
    rng = np.random.default_rng(seed)
    image = Tensor(rng.random(size=(cfg.channels,) + cfg.image_hw) - 0.5)
    ids = [2, 3, 4, 5, 0, 0][:cfg.max_len]
    return SimpleNamespace(image=image, token_ids=ids, label=label, id="t0")


class TestVisualSemanticAttention:
    def test_all_ones_gate_is_identity(self):
        p = tiny_fusion()
        p.fusion_proj.data[:] = np.eye(8)
        img = Tensor(RNG.normal(size=(5, 8)))
        txt = Tensor(np.zeros((4, 8)))
        txt.data[0] = 1.0  # cls summary projects to an all-ones gate
        out = visual_semantic_attention(img, txt, p)
        np.testing.assert_allclose(out.data, img.data, atol=1e-6)

    def test_zero_gate_annihilates(self):
        p = tiny_fusion()
        p.fusion_proj.data[:] = 0.0
        img = Tensor(RNG.normal(size=(5, 8)))
        txt = Tensor(RNG.normal(size=(4, 8)))
        out = visual_semantic_attention(img, txt, p)
        np.testing.assert_array_equal(out.data, np.zeros((5, 8)))

    def test_grad_wrt_both_branches(self):
        p = tiny_fusion()
        img = Tensor(RNG.normal(size=(5, 8)))
        txt = Tensor(RNG.normal(size=(4, 8)))
        readout = Tensor(0.1 * np.random.default_rng(3).normal(size=(5, 8)))
        assert grad_check(
            lambda t: sum_all(mul(visual_semantic_attention(t, txt, p),
                                  readout)), img).passed
        assert grad_check(
            lambda t: sum_all(mul(visual_semantic_attention(img, t, p),
                                  readout)), txt).passed

    def test_mean_pool_excludes_pad(self):
        p = tiny_fusion(mode="mean")
        img = Tensor(np.ones((3, 8)))
        txt_data = RNG.normal(size=(4, 8)).astype(np.float32)
        valid = np.array([True, True, False, False])
        out = visual_semantic_attention(Tensor(txt_data), Tensor(txt_data), p,
                                        text_valid=valid)
        txt_data2 = txt_data.copy()
        txt_data2[2:] = 99.0  # pad rows must not matter
        out2 = visual_semantic_attention(Tensor(txt_data), Tensor(txt_data2),
                                         p, text_valid=valid)
        np.testing.assert_allclose(out.data, out2.data, atol=1e-5)


class TestSelfAttentionFusion:
    def test_zero_layer_identity(self):
        p = tiny_fusion()
        p.self_attn_layer = zero_encoder_layer(8, 16, 2)
        x = Tensor(RNG.normal(size=(5, 8)))
        np.testing.assert_array_equal(
            self_attention_fusion(x, p).data, x.data)

    def test_shape_preserved(self):
        p = tiny_fusion()
        x = Tensor(RNG.normal(size=(5, 8)))
        assert self_attention_fusion(x, p).shape == (5, 8)

    def test_attention_rows_stochastic(self):
        p = tiny_fusion()
        x = Tensor(RNG.normal(size=(5, 8)) * 2.0)
        _, weights = self_attention_fusion(x, p, return_weights=True)
        for w in weights:
            np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-6)


class TestClassify:
    def test_zero_head_is_symmetric(self):
        p = tiny_fusion(std=0.0)
        out = classify(Tensor(RNG.normal(size=(5, 8))), p)
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_probabilities_sum_to_one(self):
        p = tiny_fusion()
        for _ in range(10):
            out = classify(Tensor(RNG.normal(size=(5, 8)) * 3), p)
            assert abs(out.data.sum() - 1.0) < 1e-6
            assert (out.data >= 0).all()

    def test_log3_bias(self):
        p = tiny_fusion(std=0.0)
        p.cls_b.data[:] = [0.0, math.log(3.0)]
        out = classify(Tensor(RNG.normal(size=(5, 8))), p)
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-6)

    def test_argmax_invariant_to_constant_bias_shift(self):
        p = tiny_fusion()
        x = Tensor(RNG.normal(size=(5, 8)))
        before = int(np.argmax(classify(x, p).data))
        p.cls_b.data += 3.7
        after = int(np.argmax(classify(x, p).data))
        assert before == after


class TestStmaForward:
    def test_all_zero_params_give_coin_flip(self):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=0)
        for t in param_table(params).values():
            t.data[:] = 0.0
        probs = stma_forward(tiny_sample(cfg), cfg, params)
        np.testing.assert_allclose(probs.data, [0.5, 0.5], atol=1e-7)

    def test_both_branches_removed_is_config_error(self):
        with pytest.raises(ConfigError):
            tiny_cfg(use_vision_branch=False, use_caption_branch=False,
                     use_visual_semantic=False)

    def test_no_self_attention_two_path_equality(self):
        from stma.caption import caption_encode, pad_mask
        from stma.vision import vision_encode

        cfg = tiny_cfg().for_mode(AblationMode.NO_SELF_ATTENTION)
        params = init_params(cfg, seed=1)
        sample = tiny_sample(cfg)
        via_model = stma_forward(sample, cfg, params).data

        img_feats = vision_encode(sample.image, params.vision)
        txt_feats = caption_encode(sample.token_ids, params.caption)
        fused = visual_semantic_attention(
            img_feats, txt_feats, params.fusion,
            text_valid=pad_mask(sample.token_ids))
        direct = classify(fused, params.fusion).data
        np.testing.assert_allclose(via_model, direct, atol=1e-7)

    def test_unimodal_modes_run_and_differ(self):
        base = tiny_cfg()
        sample = tiny_sample(base, seed=3)
        outs = {}
        for mode in AblationMode:
            cfg = base.for_mode(mode)
            params = init_params(cfg, seed=2)
            outs[mode] = stma_forward(sample, cfg, params).data
            assert abs(outs[mode].sum() - 1.0) < 1e-6
        assert not np.allclose(outs[AblationMode.FULL],
                               outs[AblationMode.TEXTUAL_ONLY])

    def test_every_mode_populates_all_registered_grads(self):
        base = tiny_cfg()
        sample = tiny_sample(base, seed=4)
        for mode in AblationMode:
            cfg = base.for_mode(mode)
            params = init_params(cfg, seed=5)
            engaged = trainable_parameters(params, cfg)
            with GradGraph() as g:
                probs = stma_forward(sample, cfg, params)
                loss = scale(sum_all(log(narrow(probs, 0, 1, 1))), -1.0)
                g.backward(loss)
            missing = [n for n, t in engaged.items() if t.grad is None]
            assert not missing, f"{mode}: no grad on {missing}"

    def test_mode_flag_partition(self):
        base = tiny_cfg()
        full_names = set(trainable_parameters(init_params(base, 0), base))
        t_cfg = base.for_mode(AblationMode.TEXTUAL_ONLY)
        t_names = set(trainable_parameters(init_params(t_cfg, 0), t_cfg))
        assert not any(n.startswith("vision.") for n in t_names)
        assert "fusion.proj" not in t_names
        n_sa = base.for_mode(AblationMode.NO_SELF_ATTENTION)
        sa_names = set(trainable_parameters(init_params(n_sa, 0), n_sa))
        assert not any(n.startswith("fusion.layer.") for n in sa_names)
        assert full_names > sa_names


class TestFullModelGradient:
    def test_gradients_match_finite_differences(self):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=11)
        sample = tiny_sample(cfg, seed=12)
        sample.image.requires_grad = True
        label = 1

        def loss_tensor():
            probs = stma_forward(sample, cfg, params)
            return scale(sum_all(log(narrow(probs, 0, label, 1))), -1.0)

        with GradGraph() as g:
            g.backward(loss_tensor())

        def loss_value():
            with pause_recording():
                return loss_tensor().item()

        tensors = list(trainable_parameters(params, cfg).values())
        tensors.append(sample.image)
        worst = central_diff_max_rel_err(
            loss_value, tensors, np.random.default_rng(13), per_tensor=2)
        assert worst < 1e-3, f"max rel err {worst}"
