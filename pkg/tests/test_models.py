import numpy as np
import pytest

from percollfft import nn
from percollfft.errors import ConfigError, ContractError, DimensionError
from percollfft.models import (
    BACKBONE_SPECS, FusionModel, ModelConfig, build_model, grad_cam, heatmap_to_uint8,
    infer_output_shape, predicted_class,
)

from gradcheck import gradcheck, weighted_sum


def small_config(fusion):
    """Tiny backbone with a narrow head and a 12-wide spectral vector."""
    return ModelConfig(backbone="tiny", fusion=fusion, fc_dims=(6, 5),
                       image_size=(20, 100), fft_dim=12)


class TestConfig:
    def test_backbone_dims(self):
        assert infer_output_shape(BACKBONE_SPECS["alexnet-style"], (3, 224, 224)) == (256, 6, 6)
        assert infer_output_shape(BACKBONE_SPECS["vgg16-style"], (3, 224, 224)) == (512, 7, 7)
        assert infer_output_shape(BACKBONE_SPECS["tiny"], (3, 96, 24)) == (32, 4, 4)
        assert sum(1 for l in BACKBONE_SPECS["vgg16-style"] if l[0] == "conv") == 13
        assert sum(1 for l in BACKBONE_SPECS["alexnet-style"] if l[0] == "conv") == 5

    def test_defaults(self):
        assert ModelConfig(backbone="alexnet-style").cnn_feature_dim == 9216
        assert ModelConfig(backbone="vgg16-style").cnn_feature_dim == 25088
        assert ModelConfig().cnn_feature_dim == 512

    def test_classifier_widths(self):
        assert ModelConfig(backbone="alexnet-style", fusion="early").classifier_in_dims == (
            9516, 4096, 1024)
        assert ModelConfig(backbone="alexnet-style", fusion="late").classifier_in_dims == (
            9216, 4396, 1024)
        assert ModelConfig(backbone="alexnet-style", fusion="none").classifier_in_dims == (
            9216, 4096, 1024)

    @pytest.mark.parametrize("kwargs", [
        {"backbone": "resnet"}, {"fusion": "middle"}, {"num_classes": 1},
        {"fusion": "early", "fft_dim": 0}, {"fft_dim": 299}, {"cnn_feature_dim": 100},
        {"dropout_rate": 1.0}, {"fc_dims": (8,)}, {"input_size": (8, 8)},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            ModelConfig(**kwargs)

    def test_fusion_none_ignores_fft_dim(self):
        assert ModelConfig(fusion="none", fft_dim=0).classifier_in_dims[0] == 512

    def test_json_round_trip_and_fingerprint(self):
        cfg = ModelConfig(fusion="early")
        back = ModelConfig.from_json(cfg.to_json())
        assert back == cfg and back.fingerprint() == cfg.fingerprint()
        assert ModelConfig(fusion="late").fingerprint() != cfg.fingerprint()


class TestFusionWiring:
    @pytest.mark.parametrize("fusion,widths", [
        ("none", (512, 256, 128)), ("early", (812, 256, 128)), ("late", (512, 556, 128)),
    ])
    def test_parameter_shapes(self, fusion, widths):
        model = build_model(ModelConfig(fusion=fusion), seed=0)
        shapes = dict((n, p.shape) for n, p in model.named_parameters())
        assert (shapes["fc1.weight"][1], shapes["fc2.weight"][1], shapes["fc3.weight"][1]) == widths
        assert shapes["fc3.weight"][0] == 4

    def test_exactly_one_layer_widens(self):
        base = ModelConfig(fusion="none").classifier_in_dims
        for fusion in ("early", "late"):
            dims = ModelConfig(fusion=fusion).classifier_in_dims
            assert sorted(np.subtract(dims, base).tolist()) == [0, 0, 300]

    def test_head_mismatch_rejected(self):
        model = build_model(ModelConfig(fusion="late"))
        with pytest.raises(ConfigError):
            FusionModel(ModelConfig(fusion="early"), model.features,
                        (model.fc1, model.fc2, model.fc3))

    def test_logit_shape_and_fft_contract(self, rng):
        x = rng.random((2, 3, 96, 24)).astype(np.float32)
        none = build_model(ModelConfig(fusion="none"))
        assert none.forward(x).shape == (2, 4)
        late = build_model(ModelConfig(fusion="late"))
        assert late.forward(x, rng.random((2, 300))).shape == (2, 4)
        with pytest.raises(ContractError):
            late.forward(x)
        with pytest.raises(ContractError):
            none.forward(x, rng.random((2, 300)))
        with pytest.raises(ContractError):
            late.forward(x, rng.random((2, 299)))

    def test_wrong_input_size(self, rng):
        model = build_model(ModelConfig(fusion="none"))
        with pytest.raises(DimensionError):
            model.forward_features(rng.random((3, 96, 25)))


class TestForward:
    def test_zero_weights_give_zero_features(self, rng):
        model = build_model(ModelConfig(fusion="none"))
        for p in model.parameters():
            p.data[...] = 0.0
        assert not model.forward_features(np.zeros((3, 96, 24), np.float32)).data.any()
        assert not model.forward_features(rng.random((3, 96, 24))).data.any()

    def test_input_standardised(self, rng):
        # features are invariant to a global brightness gain and offset
        model = build_model(ModelConfig(fusion="none"), seed=1)
        x = rng.random((3, 96, 24)).astype(np.float32) * 0.5
        a = model.forward_features(x).data
        b = model.forward_features(0.3 + 1.2 * x).data
        np.testing.assert_allclose(a, b, rtol=1e-3, atol=1e-5)

    def test_tiny_feature_length(self, rng):
        model = build_model(ModelConfig())
        assert model.forward_features(rng.random((3, 96, 24))).shape == (512,)

    def test_eval_mode_deterministic(self, rng):
        model = build_model(ModelConfig(fusion="early"), seed=4)
        x, f = rng.random((3, 96, 24)), rng.random(300)
        np.testing.assert_array_equal(model.forward(x, f).data, model.forward(x, f).data)

    def test_train_mode_dropout_changes_logits(self, rng):
        from percollfft.rng import Xoshiro256
        model = build_model(ModelConfig(fusion="none"), seed=4)
        h = model.forward_features(rng.random((3, 96, 24)))
        a = model.classify(h, train=True, rng=Xoshiro256(1)).data
        b = model.classify(h, train=True, rng=Xoshiro256(2)).data
        assert not np.array_equal(a, b)

    def test_init_is_seeded(self):
        a, b = build_model(ModelConfig(), 3), build_model(ModelConfig(), 3)
        assert a.checksum() == b.checksum()
        assert build_model(ModelConfig(), 4).checksum() != a.checksum()

    def test_argmax_ties_and_shift_invariance(self):
        assert predicted_class([1.0, 3.0, 3.0, 0.0]) == 1
        logits = np.array([[0.2, -1.0, 0.7, 0.1]])
        assert predicted_class(logits + 5.0)[0] == predicted_class(logits)[0] == 2

    def test_predict_proba_rows_sum_to_one(self, rng):
        model = build_model(ModelConfig(fusion="none"))
        p = model.predict_proba(rng.random((3, 3, 96, 24)))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


class TestHeadGradients:
    @pytest.mark.parametrize("fusion", ["none", "early", "late"])
    def test_head_finite_differences(self, fusion):
        cfg = small_config(fusion)
        model = build_model(cfg, seed=1)
        rng = np.random.default_rng(8)
        fc2, fc3 = model.fc2, model.fc3

        def head(h, f, w2, w3):
            fc2.weight, fc3.weight = w2, w3
            return weighted_sum(model.classify(h, f if fusion != "none" else None), probe)

        for _ in range(3):
            probe = rng.standard_normal(4)
            arrays = [rng.standard_normal(512), rng.random(12),
                      fc2.weight.data.astype(np.float64), fc3.weight.data.astype(np.float64)]
            assert gradcheck(head, arrays) < 1e-3


def _one_by_one_model(sign=1.0):
    """1x1 conv (every channel sees the same positive mix of RGB) plus a positive head.

    The conv bias keeps activations of the standardised input mostly positive,
    so the head's ReLUs pass gradient through.
    """
    cfg = ModelConfig(fusion="none", fc_dims=(6, 5))
    conv = nn.Conv2d(3, 32, 1, rng=None)
    conv.weight.data[...] = np.array([0.2, 0.5, 0.3], np.float32)[None, :, None, None]
    conv.bias.data[...] = 2.0
    features = [conv, nn.AdaptiveAvgPool2d((4, 4))]
    model = build_model(cfg, seed=0)
    for layer in (model.fc1, model.fc2, model.fc3):
        layer.weight.data[...] = np.abs(layer.weight.data) + 0.01
        layer.bias.data[...] = 0.0
    model.fc3.weight.data *= sign
    return FusionModel(cfg, features, (model.fc1, model.fc2, model.fc3))


class TestGradCam:
    def test_range_and_size(self, rng):
        model = build_model(ModelConfig(fusion="late"), seed=2)
        x, f = rng.random((3, 96, 24)), rng.random(300)
        for c in range(4):
            cam = grad_cam(model, x, c, h_fft=f)
            assert cam.heatmap.shape == (96, 24)
            assert cam.heatmap.min() >= 0.0 and cam.heatmap.max() <= 1.0
            if not cam.degenerate:
                assert cam.heatmap.max() == 1.0 and cam.heatmap.min() == 0.0

    def test_one_by_one_conv_tracks_input(self, rng):
        model = _one_by_one_model()
        x = (0.3 * rng.random((3, 96, 24))).astype(np.float32)
        x[:, 40, 7] = 1.0
        cam = grad_cam(model, x, target_class=2)
        assert not cam.degenerate and np.all(cam.weights > 0)
        mix = np.tensordot([0.2, 0.5, 0.3], x, axes=1)
        assert np.unravel_index(cam.heatmap.argmax(), cam.heatmap.shape) == (40, 7)
        assert np.unravel_index(mix.argmax(), mix.shape) == (40, 7)

    def test_negative_contributions_flagged(self):
        model = _one_by_one_model(sign=-1.0)
        x = np.random.default_rng(0).random((3, 96, 24)).astype(np.float32)
        cam = grad_cam(model, x, target_class=0)
        assert cam.degenerate
        assert not cam.heatmap.any() and cam.heatmap.shape == (96, 24)

    def test_parameter_grads_untouched(self, rng):
        model = build_model(ModelConfig(fusion="none"))
        model.fc1.weight.grad = np.full(model.fc1.weight.shape, 7.0, np.float32)
        grad_cam(model, rng.random((3, 96, 24)), 1)
        assert np.all(model.fc1.weight.grad == 7.0)
        assert model.fc2.weight.grad is None

    def test_invalid_target(self, rng):
        model = build_model(ModelConfig(fusion="none"))
        with pytest.raises(ContractError):
            grad_cam(model, rng.random((3, 96, 24)), 4)

    def test_uint8_rendering(self):
        cam = np.linspace(0, 1, 12).reshape(3, 4)
        gray = heatmap_to_uint8(cam)
        assert gray.dtype == np.uint8 and gray[0, 0] == 0 and gray[-1, -1] == 255
        over = heatmap_to_uint8(cam, overlay=np.zeros((3, 4, 3)))
        assert over.shape == (3, 4, 3) and over[-1, -1].tolist() == [128, 0, 0]
