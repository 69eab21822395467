import numpy as np
import pytest

from odereg.autodiff import Tensor
from odereg.encoder import (convgru_step, encode_sequence,
                            feature_pyramid_forward, zero_context)
from odereg.errors import ShapeError
from odereg.model import ModelConfig, init_params, parameter_count

from oracles import conv3d_ref


@pytest.fixture
def cfg():
    return ModelConfig(dtype="float64")


@pytest.fixture
def params(cfg):
    return init_params(cfg, seed=7)


def leaky_ref(x, slope=0.1):
    return np.where(x >= 0, x, slope * x)


def sigmoid_ref(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestFeaturePyramid:
    def test_output_channels_and_extents(self, rng, cfg, params):
        vol = Tensor(rng.random((1, 32, 32, 32)))
        fm = feature_pyramid_forward(vol, params, cfg)
        assert fm.half.shape == (16, 16, 16, 16)
        assert fm.quarter.shape == (32, 8, 8, 8)

    def test_zero_input_zero_bias_gives_zero_features(self, cfg, params):
        vol = Tensor(np.zeros((1, 8, 8, 8)))
        fm = feature_pyramid_forward(vol, params, cfg)
        assert np.all(fm.half.data == 0.0)
        assert np.all(fm.quarter.data == 0.0)

    def test_matches_layer_by_layer_oracle(self, rng, cfg, params):
        vol = rng.random((1, 8, 8, 8))
        fm = feature_pyramid_forward(Tensor(vol), params, cfg)
        x = vol
        for name, _, _, stride in (("pyr1", 1, 16, 2), ("pyr2", 16, 16, 1),
                                   ("pyr3", 16, 16, 1), ("pyr4", 16, 32, 2),
                                   ("pyr5", 32, 32, 1), ("pyr6", 32, 32, 1)):
            x = leaky_ref(conv3d_ref(x, params[f"{name}.w"].data,
                                     params[f"{name}.b"].data, stride))
            if name == "pyr3":
                np.testing.assert_allclose(fm.half.data, x, rtol=1e-6,
                                           atol=1e-12)
        np.testing.assert_allclose(fm.quarter.data, x, rtol=1e-6, atol=1e-12)

    def test_indivisible_extents_rejected(self, rng, cfg, params):
        with pytest.raises(ShapeError):
            feature_pyramid_forward(Tensor(rng.random((1, 10, 8, 8))),
                                    params, cfg)


class TestConvGru:
    def test_hidden_keeps_32_channels_at_quarter_resolution(self, rng, cfg,
                                                            params):
        f = Tensor(rng.random((32, 4, 4, 4)))
        h = zero_context(f)
        out = convgru_step(f, h, params, cfg)
        assert out.shape == (32, 4, 4, 4)

    def test_zero_weights_zero_hidden_gives_zero(self, cfg):
        zero = {name: Tensor(np.zeros((32, 64, 3, 3, 3)))
                for name in ("gru_update.w", "gru_reset.w", "gru_cand.w")}
        zero.update({name: Tensor(np.zeros(32))
                     for name in ("gru_update.b", "gru_reset.b",
                                  "gru_cand.b")})
        f = Tensor(np.zeros((32, 4, 4, 4)))
        out = convgru_step(f, zero_context(f), zero, cfg)
        assert np.all(out.data == 0.0)

    def test_matches_gate_by_gate_oracle(self, rng, cfg, params):
        f = rng.random((32, 3, 3, 3))
        h = rng.random((32, 3, 3, 3))
        out = convgru_step(Tensor(f), Tensor(h), params, cfg)
        fh = np.concatenate([f, h])
        z = sigmoid_ref(conv3d_ref(fh, params["gru_update.w"].data,
                                   params["gru_update.b"].data, 1))
        r = sigmoid_ref(conv3d_ref(fh, params["gru_reset.w"].data,
                                   params["gru_reset.b"].data, 1))
        cand = np.tanh(conv3d_ref(np.concatenate([f, r * h]),
                                  params["gru_cand.w"].data,
                                  params["gru_cand.b"].data, 1))
        want = (1 - z) * h + z * cand
        np.testing.assert_allclose(out.data, want, rtol=1e-6, atol=1e-12)

    def test_shape_mismatch_rejected(self, rng, cfg, params):
        with pytest.raises(ShapeError):
            convgru_step(Tensor(rng.random((32, 4, 4, 4))),
                         Tensor(rng.random((32, 4, 4, 5))), params, cfg)


class TestEncodeSequence:
    def make_seq(self, rng, t, extent=8):
        return [Tensor(rng.random((1, extent, extent, extent)))
                for _ in range(t)]

    def test_pairwise_sequence(self, rng, cfg, params):
        feats, context = encode_sequence(self.make_seq(rng, 2), params, cfg)
        assert len(feats) == 2
        assert context.shape == (32, 2, 2, 2)

    def test_six_phase_sequence(self, rng, cfg, params):
        feats, context = encode_sequence(self.make_seq(rng, 6), params, cfg)
        assert len(feats) == 6
        assert context is not None

    def test_equals_manual_loop(self, rng, cfg, params):
        seq = self.make_seq(rng, 3)
        feats, context = encode_sequence(seq, params, cfg)
        hidden = None
        for i, vol in enumerate(seq):
            fm = feature_pyramid_forward(vol, params, cfg)
            np.testing.assert_array_equal(feats[i].quarter.data,
                                          fm.quarter.data)
            if hidden is None:
                hidden = zero_context(fm.quarter)
            hidden = convgru_step(fm.quarter, hidden, params, cfg)
        np.testing.assert_array_equal(context.data, hidden.data)

    def test_short_sequence_rejected(self, rng, cfg, params):
        with pytest.raises(ShapeError):
            encode_sequence(self.make_seq(rng, 1), params, cfg)

    def test_weight_sharing_features_frame_independent(self, rng, cfg,
                                                       params):
        vol = rng.random((1, 8, 8, 8))
        seq = [Tensor(vol.copy()) for _ in range(3)]
        feats, _ = encode_sequence(seq, params, cfg)
        for fm in feats[1:]:
            np.testing.assert_array_equal(fm.quarter.data,
                                          feats[0].quarter.data)
            np.testing.assert_array_equal(fm.half.data, feats[0].half.data)

    def test_context_depends_on_frame_order(self, rng, cfg, params):
        seq = self.make_seq(rng, 4)
        _, fwd = encode_sequence(seq, params, cfg)
        _, rev = encode_sequence(seq[::-1], params, cfg)
        assert not np.allclose(fwd.data, rev.data)

    def test_nogru_context_is_fixed_quarter_features(self, rng):
        cfg = ModelConfig(use_gru=False, dtype="float64")
        params = init_params(cfg, seed=3)
        seq = self.make_seq(rng, 3)
        feats, context = encode_sequence(seq, params, cfg)
        np.testing.assert_array_equal(context.data, feats[0].quarter.data)

    def test_outputs_finite_for_unit_range_inputs(self, rng, cfg, params):
        seq = self.make_seq(rng, 4)
        feats, context = encode_sequence(seq, params, cfg)
        assert np.all(np.isfinite(context.data))
        for fm in feats:
            assert np.all(np.isfinite(fm.half.data))
            assert np.all(np.isfinite(fm.quarter.data))


class TestInitParams:
    def test_deterministic_per_seed(self, cfg):
        a = init_params(cfg, seed=11)
        b = init_params(cfg, seed=11)
        assert a.keys() == b.keys()
        for k in a:
            np.testing.assert_array_equal(a[k].data, b[k].data)

    def test_single_level_has_no_half_network(self, cfg, params):
        assert not any(k.startswith("vnh") for k in params)

    def test_two_level_widths_match_layer_table(self):
        cfg = ModelConfig(levels=2)
        params = init_params(cfg, seed=0)
        assert params["vnq0.w"].shape == (64, 224, 3, 3, 3)
        assert params["vnq1.w"].shape == (48, 288, 3, 3, 3)
        assert params["vnq2.w"].shape == (32, 336, 3, 3, 3)
        assert params["vnq3.w"].shape == (16, 368, 3, 3, 3)
        assert params["vnq_head.w"].shape == (3, 16, 3, 3, 3)
        assert params["vnh0.w"].shape == (32, 78, 3, 3, 3)
        assert params["vnh1.w"].shape == (16, 110, 3, 3, 3)
        assert params["vnh_head.w"].shape == (3, 16, 3, 3, 3)

    def test_parameter_count_close_to_published_size(self):
        # the single-level network should land near 1.46M learnable values
        n = parameter_count(init_params(ModelConfig(levels=1), seed=0))
        assert 1.3e6 < n < 1.6e6
