"""Encoder towers, projection heads, checkpoint serialization."""

import numpy as np
import pytest

from gesturerep import diffcore as dc
from gesturerep.diffcore import ShapeError, Tensor
from gesturerep.pose import SkeletonGraph, build_skeleton_graph
from gesturerep.towers import (
    CheckpointFormatError,
    GestureEncoder,
    GestureEncoderConfig,
    InputTooShortError,
    ProjectionHead,
    ProjectionHeadConfig,
    SpeechHead,
    SpeechHeadConfig,
    pack_checkpoint,
    unpack_checkpoint,
)


def _wrap(params_nd):
    return {k: Tensor(v) for k, v in params_nd.items()}


class TestGestureEncoder:
    def test_identity_network_reduces_to_pooling(self):
        # identity adjacency, identity channel map, unit temporal kernel,
        # identity FC, no residual: output = per-channel mean of the input
        cfg = GestureEncoderConfig(channels=(3,), temporal_kernel=1, temporal_strides=(1,),
                                   output_dim=3, residual=False)
        graph = SkeletonGraph(27, (), np.eye(27))
        enc = GestureEncoder(cfg, graph)
        params = enc.init_params(np.random.default_rng(0))
        params["gesture.b0.graph_w"] = np.eye(3)
        params["gesture.b0.time_w"] = np.eye(3)[:, :, None]
        params["gesture.fc_w"] = np.eye(3)
        x = np.abs(np.random.default_rng(1).normal(size=(2, 3, 6, 27))) + 0.1
        out = enc.forward(_wrap(params), Tensor(x))
        assert np.allclose(out.values, x.mean(axis=(2, 3)), atol=1e-12)

    def test_residual_fires_when_channels_match(self):
        cfg = GestureEncoderConfig(channels=(3,), temporal_kernel=1, temporal_strides=(1,),
                                   output_dim=3, residual=True)
        graph = SkeletonGraph(27, (), np.eye(27))
        enc = GestureEncoder(cfg, graph)
        params = enc.init_params(np.random.default_rng(0))
        params["gesture.b0.graph_w"] = np.eye(3)
        params["gesture.b0.time_w"] = np.eye(3)[:, :, None]
        params["gesture.fc_w"] = np.eye(3)
        x = np.abs(np.random.default_rng(1).normal(size=(1, 3, 4, 27))) + 0.1
        out = enc.forward(_wrap(params), Tensor(x))
        assert np.allclose(out.values, 2.0 * x.mean(axis=(2, 3)), atol=1e-12)

    def test_zero_input_zero_biases_gives_zero(self):
        enc = GestureEncoder(GestureEncoderConfig(channels=(4, 5), temporal_kernel=3,
                                                  temporal_strides=(1, 2), output_dim=8))
        params = enc.init_params(np.random.default_rng(2))
        out = enc.forward(_wrap(params), Tensor(np.zeros((2, 3, 6, 27))))
        assert np.allclose(out.values, 0.0)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        perm = rng.permutation(27)
        base = build_skeleton_graph()
        adj = base.normalized_adjacency
        adj_p = adj[np.ix_(perm, perm)]
        cfg = GestureEncoderConfig(channels=(4, 6), temporal_kernel=3, temporal_strides=(1, 2),
                                   output_dim=5)
        enc = GestureEncoder(cfg, SkeletonGraph(27, base.spatial_edges, adj))
        enc_p = GestureEncoder(cfg, SkeletonGraph(27, base.spatial_edges, adj_p))
        params = enc.init_params(rng)
        x = rng.normal(size=(2, 3, 6, 27))
        out = enc.forward(_wrap(params), Tensor(x))
        out_p = enc_p.forward(_wrap(params), Tensor(x[:, :, :, perm]))
        assert np.allclose(out.values, out_p.values, atol=1e-10)

    def test_output_dim_contract_at_defaults(self):
        enc = GestureEncoder(GestureEncoderConfig())
        params = enc.init_params(np.random.default_rng(4))
        out = enc.forward(_wrap(params), Tensor(np.random.default_rng(5).normal(size=(1, 3, 25, 27))))
        assert out.shape == (1, 256)
        assert np.all(np.isfinite(out.values))

    def test_no_accidental_scale_invariance(self):
        enc = GestureEncoder(GestureEncoderConfig(channels=(4, 4), temporal_kernel=3,
                                                  temporal_strides=(1, 1), output_dim=6))
        params = enc.init_params(np.random.default_rng(6))
        x = np.random.default_rng(7).normal(size=(1, 3, 8, 27))
        a = enc.forward(_wrap(params), Tensor(x))
        b = enc.forward(_wrap(params), Tensor(2.0 * x))
        assert not np.allclose(a.values, b.values)

    def test_too_short_window_rejected(self):
        enc = GestureEncoder(GestureEncoderConfig(channels=(4,), temporal_kernel=3,
                                                  temporal_strides=(1,), output_dim=4))
        params = enc.init_params(np.random.default_rng(8))
        with pytest.raises(InputTooShortError):
            enc.forward(_wrap(params), Tensor(np.zeros((1, 3, 3, 27))))

    def test_wrong_joint_count_rejected(self):
        enc = GestureEncoder(GestureEncoderConfig(channels=(4,), temporal_kernel=3,
                                                  temporal_strides=(1,), output_dim=4))
        params = enc.init_params(np.random.default_rng(9))
        with pytest.raises(ShapeError):
            enc.forward(_wrap(params), Tensor(np.zeros((1, 3, 8, 20))))


class TestSpeechHead:
    def test_single_layer_mixing_is_identity(self):
        cfg = SpeechHeadConfig(layer_count=1, feature_dim=4, hidden_dim=5, output_dim=6)
        head = SpeechHead(cfg)
        rng = np.random.default_rng(0)
        params = head.init_params(rng)
        x = rng.normal(size=(2, 1, 7, 4))
        out1 = head.forward(_wrap(params), Tensor(x))
        params["speech.layer_logits"] = np.array([37.0])  # softmax of singleton is 1
        out2 = head.forward(_wrap(params), Tensor(x))
        assert np.allclose(out1.values, out2.values, atol=1e-12)

    def test_identical_layers_invariant_to_logits(self):
        cfg = SpeechHeadConfig(layer_count=3, feature_dim=4, hidden_dim=5, output_dim=6)
        head = SpeechHead(cfg)
        rng = np.random.default_rng(1)
        params = head.init_params(rng)
        one = rng.normal(size=(2, 1, 7, 4))
        x = np.repeat(one, 3, axis=1)
        out1 = head.forward(_wrap(params), Tensor(x))
        params["speech.layer_logits"] = np.array([2.0, -1.0, 0.5])
        out2 = head.forward(_wrap(params), Tensor(x))
        assert np.allclose(out1.values, out2.values, atol=1e-12)

    def test_zero_features_zero_biases(self):
        cfg = SpeechHeadConfig(layer_count=2, feature_dim=4, hidden_dim=5, output_dim=6)
        head = SpeechHead(cfg)
        params = head.init_params(np.random.default_rng(2))
        out = head.forward(_wrap(params), Tensor(np.zeros((3, 2, 7, 4))))
        assert np.allclose(out.values, 0.0)

    def test_layer_count_mismatch_rejected(self):
        cfg = SpeechHeadConfig(layer_count=4, feature_dim=4, hidden_dim=5, output_dim=6)
        head = SpeechHead(cfg)
        params = head.init_params(np.random.default_rng(3))
        with pytest.raises(ShapeError):
            head.forward(_wrap(params), Tensor(np.zeros((2, 3, 7, 4))))

    def test_output_dim_contract_at_defaults(self):
        head = SpeechHead(SpeechHeadConfig())
        params = head.init_params(np.random.default_rng(4))
        out = head.forward(_wrap(params), Tensor(np.random.default_rng(5).normal(size=(2, 4, 50, 16))))
        assert out.shape == (2, 128)
        assert np.all(np.isfinite(out.values))


class TestProjectionHead:
    def test_identity_configuration_passthrough(self):
        head = ProjectionHead(ProjectionHeadConfig(4, output_dim=4), "proj_g")
        params = head.init_params(np.random.default_rng(0))
        params["proj_g.w1"] = np.eye(4)
        params["proj_g.w2"] = np.eye(4)
        x = np.array([[0.5, 1.0, 0.0, 2.0]])
        out = head.forward(_wrap(params), Tensor(x))
        assert np.allclose(out.values, x)

    def test_zero_input_zero_biases(self):
        head = ProjectionHead(ProjectionHeadConfig(6), "proj_g")
        params = head.init_params(np.random.default_rng(1))
        out = head.forward(_wrap(params), Tensor(np.zeros((2, 6))))
        assert np.allclose(out.values, 0.0)

    def test_output_dim_contract(self):
        head = ProjectionHead(ProjectionHeadConfig(256), "proj_g")
        params = head.init_params(np.random.default_rng(2))
        out = head.forward(_wrap(params), Tensor(np.random.default_rng(3).normal(size=(3, 256))))
        assert out.shape == (3, 128)

    def test_dim_mismatch_rejected(self):
        head = ProjectionHead(ProjectionHeadConfig(8), "proj_g")
        params = head.init_params(np.random.default_rng(4))
        with pytest.raises(ShapeError):
            head.forward(_wrap(params), Tensor(np.zeros((2, 9))))

    def test_gradients_through_projection_and_encoder(self):
        cfg = GestureEncoderConfig(channels=(2, 3), temporal_kernel=3, temporal_strides=(1, 2),
                                   output_dim=4)
        enc = GestureEncoder(cfg)
        proj = ProjectionHead(ProjectionHeadConfig(4, output_dim=3), "proj_g")
        const = np.random.default_rng(10).normal(size=(2, 3))
        for attempt in range(32):
            rng = np.random.default_rng([11, attempt])
            params = enc.init_params(rng)
            params.update(proj.init_params(rng))
            for k, v in params.items():
                if v.ndim <= 1:
                    params[k] = v + rng.uniform(0.05, 0.15, size=v.shape)
            x = rng.normal(size=(2, 3, 6, 27))

            def f(p):
                return dc.sum_(dc.mul(proj.forward(p, enc.forward(p, Tensor(x))), const))

            if dc.relu_kink_margin(f(_wrap(params))) > 1e-4:
                break
        err = dc.check_gradients(f, params, epsilon=1e-5)
        assert err < 1e-4


class TestCheckpointBlock:
    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(0)
        tensors = {"a.w": rng.normal(size=(3, 4)), "b.bias": rng.normal(size=7),
                   "scalarish": np.array(3.5)}
        blob = pack_checkpoint(tensors, b'{"k": 1}')
        out, meta = unpack_checkpoint(blob)
        assert meta == b'{"k": 1}'
        assert set(out) == set(tensors)
        for k in tensors:
            assert out[k].tobytes() == np.ascontiguousarray(tensors[k], dtype="<f8").tobytes()

    def test_truncated_rejected(self):
        blob = pack_checkpoint({"w": np.ones((2, 2))})
        with pytest.raises(CheckpointFormatError):
            unpack_checkpoint(blob[:-3])

    def test_bad_magic_rejected(self):
        with pytest.raises(CheckpointFormatError):
            unpack_checkpoint(b"XXXX" + b"\0" * 32)

    def test_trailing_bytes_rejected(self):
        blob = pack_checkpoint({"w": np.ones(3)})
        with pytest.raises(CheckpointFormatError):
            unpack_checkpoint(blob + b"\0")
