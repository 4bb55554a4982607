# -*- coding: UTF-8 -*-
import unittest
from dataclasses import replace

import numpy as np

from config import GsmtConfig
from models.gated_ssl import GatedSslParams
from models.gsmt import (AnswerSet, AttentionLayerParams, FusedTokens, GsmtModel, Sample, answer_adapter,
                         clip_by_global_norm, fuse_tokens, multimodal_attention, pool_layers, score_answers,
                         selector_parameter_names)
from numerics import tensor as tn
from numerics.gradcheck import finite_diff_check
from numerics.tensor import Tensor
from services.verifier import GRAD_FLOOR, MINIMAL_CONFIG, random_sample
from utils.errors import ContractError, DimensionError, NonFiniteError

SMALL_CONFIG = GsmtConfig(T=4, N=4, I=2, d=8, d_S=8, d_h=8, d_gating=2, k=1, j=2, N_L=2)


class TestAnswerSetAndSample(unittest.TestCase):

    def test_answer_set_contract(self):
        with self.assertRaises(ContractError):
            AnswerSet(np.ones((1, 4)), 0)
        with self.assertRaises(ContractError):
            AnswerSet(np.ones((3, 4)), 3)
        self.assertEqual(len(AnswerSet(np.ones((3, 4)))), 3)

    def test_sample_flattens_frames(self):
        sample = Sample(np.zeros((4, 3, 5)), np.ones((2, 5)), AnswerSet(np.eye(2), 1))
        self.assertEqual(sample.features.shape, (12, 5))
        self.assertEqual(sample.label, 1)
        with self.assertRaises(DimensionError):
            Sample(np.zeros(5), np.ones((2, 5)), AnswerSet(np.eye(2), 1))


class TestFusionAndAttention(unittest.TestCase):

    def test_identity_projections_stack_inputs(self):
        eye = Tensor(np.eye(3))
        fused = fuse_tokens(Tensor([[1.0, 2.0, 3.0]]), Tensor([[4.0, 5.0, 6.0]]), Tensor([[7.0, 8.0, 9.0]]),
                            eye, eye, eye)
        np.testing.assert_array_equal(fused.tokens.numpy(), np.arange(1.0, 10.0).reshape(3, 3))
        self.assertEqual(fused.boundaries, (0, 1, 2, 3))

    def test_boundaries_recover_spans(self):
        rng = np.random.default_rng(0)
        s, h, w = rng.normal(size=(2, 4)), rng.normal(size=(6, 4)), rng.normal(size=(3, 5))
        eye4 = Tensor(np.eye(4))
        w_w = Tensor(rng.normal(size=(5, 4)))
        fused = fuse_tokens(Tensor(s), Tensor(h), Tensor(w), eye4, eye4, w_w)
        self.assertEqual(fused.count, 11)
        np.testing.assert_array_equal(fused.span("segments").numpy(), s)
        np.testing.assert_array_equal(fused.span("patches").numpy(), h)
        np.testing.assert_allclose(fused.span("words").numpy(), w @ w_w.numpy())
        with self.assertRaises(ContractError):
            fused.span("audio")

    def test_width_mismatch(self):
        with self.assertRaises(DimensionError):
            fuse_tokens(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))),
                        Tensor(np.eye(3)), Tensor(np.ones((3, 2))), Tensor(np.eye(3)))

    def test_single_token_attention_is_value_plus_residual(self):
        params = AttentionLayerParams.init(4, np.random.default_rng(1))
        x = np.random.default_rng(2).normal(size=(1, 4))
        fused = multimodal_attention(FusedTokens(Tensor(x), (0, 1, 1, 1)), [params])
        np.testing.assert_allclose(fused.layers[0].numpy(), x + x @ params.w_v.data, rtol=1e-12)

    def test_identical_tokens_identical_outputs(self):
        rng = np.random.default_rng(3)
        layers = [AttentionLayerParams.init(4, rng) for _ in range(2)]
        row = rng.normal(size=(1, 4))
        fused = multimodal_attention(FusedTokens(Tensor(np.vstack([row, row])), (0, 1, 2, 2)), layers)
        out = fused.layers[-1].numpy()
        np.testing.assert_allclose(out[0], out[1], rtol=1e-12)
        self.assertEqual(len(fused.layers), 2)

    def test_attention_gradients(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(5, 4)))
        weights = Tensor(rng.normal(size=(5, 4)))
        point = {}
        for layer in range(2):
            point.update(AttentionLayerParams.init(4, rng).arrays(f"l{layer}."))

        def loss(p):
            layers = [AttentionLayerParams.from_named(p, f"l{layer}.") for layer in range(2)]
            fused = multimodal_attention(FusedTokens(x, (0, 1, 3, 5)), layers)
            return tn.sum(fused.layers[-1] * weights)

        self.assertLessEqual(finite_diff_check(loss, point, floor=1e-6), 1e-5)

    def test_empty_layer_stack(self):
        with self.assertRaises(ContractError):
            multimodal_attention(FusedTokens(Tensor(np.ones((1, 2))), (0, 1, 1, 1)), [])


class TestPoolingAndScoring(unittest.TestCase):

    def test_pool_layers_double_max(self):
        layers = np.random.default_rng(5).normal(size=(3, 7, 4))
        out = pool_layers([Tensor(l) for l in layers]).numpy()
        np.testing.assert_array_equal(out, layers.max(axis=0).max(axis=0))
        single = pool_layers([Tensor(layers[0]), Tensor(layers[0])]).numpy()
        np.testing.assert_array_equal(single, layers[0].max(axis=0))

    def test_opposite_candidates(self):
        j_o = np.array([1.0, -2.0, 0.5])
        scores, best = score_answers(Tensor(j_o), Tensor(np.vstack([j_o, -j_o])))
        np.testing.assert_allclose(scores.numpy(), [1.0, -1.0], atol=1e-15)
        self.assertEqual(best, 0)

    def test_orthogonal_tie_goes_to_lowest_index(self):
        scores, best = score_answers(Tensor([1.0, 0.0, 0.0]), Tensor([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
        np.testing.assert_array_equal(scores.numpy(), [0.0, 0.0])
        self.assertEqual(best, 0)

    def test_zero_vector_scores_zero(self):
        scores, _ = score_answers(Tensor([0.0, 0.0]), Tensor([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_array_equal(scores.numpy(), [0.0, 0.0])

    def test_scale_invariance(self):
        rng = np.random.default_rng(6)
        j_o, cands = rng.normal(size=4), rng.normal(size=(3, 4))
        base, _ = score_answers(Tensor(j_o), Tensor(cands))
        scaled, _ = score_answers(Tensor(3.0 * j_o), Tensor(cands * np.array([[2.0], [0.5], [7.0]])))
        np.testing.assert_allclose(scaled.numpy(), base.numpy(), atol=1e-12)

    def test_answer_adapter(self):
        np.testing.assert_array_equal(answer_adapter(4, 4, 0), np.eye(4))
        adapter = answer_adapter(6, 4, 0)
        self.assertEqual(adapter.shape, (6, 4))
        np.testing.assert_array_equal(adapter, answer_adapter(6, 4, 0))


class TestClipByGlobalNorm(unittest.TestCase):

    def test_rescales_above_limit(self):
        grads = {"a": np.array([3.0, 0.0]), "b": np.array([[0.0], [4.0]])}
        clipped, norm = clip_by_global_norm(grads, 1.0)
        self.assertEqual(norm, 5.0)
        np.testing.assert_allclose(clipped["a"], [0.6, 0.0])
        np.testing.assert_allclose(clipped["b"], [[0.0], [0.8]])

    def test_untouched_below_limit_or_disabled(self):
        grads = {"a": np.array([3.0, 4.0])}
        for limit in (5.0, 10.0, 0.0):
            clipped, norm = clip_by_global_norm(grads, limit)
            self.assertIs(clipped, grads)
            self.assertEqual(norm, 5.0)


class TestGsmtModel(unittest.TestCase):

    def setUp(self):
        self.model = GsmtModel.init(SMALL_CONFIG, 0)
        self.sample = random_sample(SMALL_CONFIG, np.random.default_rng(1))

    def test_parameter_names(self):
        names = set(self.model.params)
        self.assertIn("visual.w_v", names)
        self.assertIn("fuse.w_p", names)
        self.assertIn("layer1.w_q", names)
        self.assertEqual(sorted(selector_parameter_names(self.model.params)),
                         ["selector.patch_k", "selector.patch_q", "selector.seg_k", "selector.seg_q"])
        self.assertEqual(self.model.parameter_count, sum(v.size for v in self.model.params.values()))

    def test_forward_token_layout(self):
        result = self.model.forward(self.sample, self.model.bind(), seed=3)
        layout = SMALL_CONFIG.layout
        patches = SMALL_CONFIG.k * layout.N_f * SMALL_CONFIG.j
        self.assertEqual(result.fused.boundaries, (0, 1, 1 + patches, 1 + patches + 3))
        self.assertEqual(result.cosines.shape, (3,))
        self.assertIsNotNone(result.loss)
        np.testing.assert_allclose(result.logits.numpy(), SMALL_CONFIG.score_scale * result.cosines.numpy())

    def test_predict_is_deterministic(self):
        first = self.model.predict(self.sample)
        self.assertEqual(first, self.model.predict(self.sample))
        self.assertIn(first, range(3))

    def test_predict_picks_candidate_equal_to_pooled_output(self):
        result = self.model.forward(self.sample, self.model.bind())
        j_o = pool_layers(result.fused.layers).numpy()
        cands = np.vstack([-j_o, j_o, np.roll(j_o, 1)])
        sample = Sample(self.sample.features, self.sample.question, AnswerSet(cands, 0))
        self.assertEqual(self.model.predict(sample), 1)

    def test_feature_shape_checked(self):
        sample = Sample(np.zeros((3, 4, 8)), self.sample.question, self.sample.answers)
        with self.assertRaises(DimensionError):
            self.model.predict(sample)

    def test_zero_learning_rate_keeps_params(self):
        before = {k: v.copy() for k, v in self.model.params.items()}
        step = self.model.train_step([self.sample], 0.0, [5])
        for name, value in before.items():
            np.testing.assert_array_equal(self.model.params[name], value)
        self.assertTrue(np.isfinite(step.loss))

    def test_step_reports_pre_update_loss(self):
        named = self.model.bind()
        expected = self.model.forward(self.sample, named, 5).loss.item()
        step = self.model.train_step([self.sample], 0.1, [5])
        self.assertEqual(step.loss, expected)
        self.assertAlmostEqual(step.ce + SMALL_CONFIG.gamma * step.c3, step.loss, places=12)
        self.assertTrue(any(np.any(step.params[n] != self.model.init(SMALL_CONFIG, 0).params[n])
                            for n in step.params))

    def test_clipped_step_moves_params_by_learning_rate_times_clip(self):
        unclipped = GsmtModel.init(SMALL_CONFIG, 0).train_step([self.sample], 0.0, [5])
        before = {k: v.copy() for k, v in self.model.params.items()}
        step = self.model.train_step([self.sample], 0.1, [5], grad_clip=1e-3)
        self.assertGreater(step.grad_norm, 1e-3)
        self.assertEqual(step.grad_norm, unclipped.grad_norm)
        moved = np.sqrt(sum(np.sum((self.model.params[k] - v) ** 2) for k, v in before.items()))
        self.assertAlmostEqual(moved / (0.1 * 1e-3), 1.0, places=6)

    def test_non_finite_loss_names_node(self):
        self.model.params["fuse.w_w"] = np.full_like(self.model.params["fuse.w_w"], np.nan)
        with np.errstate(invalid="ignore"):
            with self.assertRaises(NonFiniteError) as ctx:
                self.model.train_step([self.sample], 0.1, [0])
        self.assertIn("fuse.w_w", str(ctx.exception))

    def test_batch_contracts(self):
        with self.assertRaises(ContractError):
            self.model.train_step([], 0.1)
        with self.assertRaises(ContractError):
            self.model.train_step([self.sample], 0.1, [1, 2])
        unlabeled = Sample(self.sample.features, self.sample.question, AnswerSet(self.sample.answers.candidates))
        with self.assertRaises(ContractError):
            self.model.train_step([unlabeled], 0.1)

    def test_penultimate_position_runs(self):
        config = replace(SMALL_CONFIG, ssl_position="penultimate")
        model = GsmtModel.init(config, 0)
        self.assertIn("layer0.log_delta", model.params)
        self.assertNotIn("visual.log_delta", model.params)
        layers = model._layers(model.bind())
        self.assertIsInstance(layers[0], GatedSslParams)
        result = model.forward(self.sample, model.bind(), seed=1)
        self.assertEqual(result.cosines.shape, (3,))

    def test_end_to_end_gradients(self):
        model = GsmtModel.init(MINIMAL_CONFIG, 0)
        sample = random_sample(MINIMAL_CONFIG, np.random.default_rng([0, 9]))
        worst = finite_diff_check(model.objective(sample, 0), model.params, floor=GRAD_FLOOR,
                                  skip=selector_parameter_names(model.params))
        self.assertLessEqual(worst, 1e-5)


if __name__ == '__main__':
    unittest.main()
