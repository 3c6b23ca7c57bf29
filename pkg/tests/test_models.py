import numpy as np
import pytest

from spikedistill import functional as F
from spikedistill.errors import ConfigError, StateError
from spikedistill.analytics import firing_rate
from spikedistill.models import (ArchConfig, RateRecorder, build_student, build_teacher, check_tap_compat,
                                 forward_student, forward_teacher)
from spikedistill.neuron import NeuronConfig
from spikedistill.rng import stream
from spikedistill.tensor import Tensor, tape_size

MNIST = ArchConfig()
CIFAR = ArchConfig(in_channels=3, height=32, width=32)


def batch(arch, b=8, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal((b, arch.in_channels, arch.height, arch.width)))


class TestTeacher:
    @pytest.mark.parametrize("arch,hw", [(MNIST, 7), (CIFAR, 8)])
    def test_shapes(self, arch, hw):
        m = build_teacher(arch, stream(0, "init"))
        logits, tap = forward_teacher(m, batch(arch))
        assert logits.shape == (8, 10) and tap.shape == (8, 32, hw, hw)

    def test_single_class_rejected(self):
        with pytest.raises(ConfigError):
            build_teacher(ArchConfig(n_cls=1))

    def test_bad_spatial_reduction(self):
        with pytest.raises(ConfigError):
            build_teacher(ArchConfig(height=30))

    def test_unloaded_weights(self):
        with pytest.raises(StateError):
            forward_teacher(build_teacher(MNIST), batch(MNIST))

    def test_zero_input_uniform_softmax(self):
        m = build_teacher(MNIST, stream(0, "init"))
        logits, _ = forward_teacher(m, Tensor(np.zeros((2, 1, 28, 28), np.float32)))
        np.testing.assert_allclose(F.softmax(logits).data, 0.1, rtol=1e-6)

    def test_tap_nonnegative(self):
        m = build_teacher(MNIST, stream(1, "init"))
        _, tap = forward_teacher(m, batch(MNIST, seed=4))
        assert (tap.data >= 0).all()

    def test_frozen_teacher_records_nothing(self):
        m = build_teacher(MNIST, stream(0, "init"))
        m.freeze()
        forward_teacher(m, batch(MNIST))
        assert tape_size() == 0


class TestStudent:
    def test_tap_shape_T4(self):
        m = build_student(MNIST, rng=stream(0, "init"))
        logits, feat = forward_student(m, batch(MNIST), 4)
        assert logits.shape == (8, 10) and feat.shape == (4, 8, 16, 7, 7)

    def test_spikes_binary(self):
        m = build_student(MNIST, rng=stream(0, "init"))
        _, feat = forward_student(m, batch(MNIST) * 5.0, 4)
        assert np.isin(feat.data.data, (0.0, 1.0)).all()

    def test_T1_logits_equal_single_step(self):
        m = build_student(MNIST, rng=stream(0, "init"))
        x = batch(MNIST)
        logits, _ = forward_student(m, x, 1)
        h = x
        for layer in m.layers:
            if hasattr(layer, "reset"):
                layer.reset()
        for layer in m.layers:
            h = layer(h)
        np.testing.assert_array_equal(logits.data, h.data)

    def test_T0_rejected(self):
        with pytest.raises(ConfigError):
            forward_student(build_student(MNIST, rng=stream(0, "init")), batch(MNIST), 0)

    def test_higher_threshold_lowers_rate(self):
        x = batch(MNIST, 16) * 3.0
        rates = []
        for v_th in (0.25, 1.0, 4.0, 64.0):
            m = build_student(MNIST, NeuronConfig(v_th=v_th), stream(0, "init"))
            _, feat = forward_student(m, x, 4)
            rates.append(firing_rate(feat))
        assert rates == sorted(rates, reverse=True) and rates[-1] == 0.0

    def test_rate_recorder_counts_every_layer(self):
        m = build_student(MNIST, rng=stream(0, "init"))
        rec = RateRecorder()
        forward_student(m, batch(MNIST), 3, rec)
        assert set(rec.counts) == {"if1", "if2"}
        assert rec.counts["if2"] == 3 * 8 * 16 * 7 * 7

    def test_equal_channels_need_no_adapter(self):
        from spikedistill.distill import DistillHead

        assert DistillHead(32, 32).adapter is None
        assert DistillHead(16, 32).adapter is not None

    def test_tap_compat(self):
        t = build_teacher(MNIST, stream(0, "init"))
        s = build_student(CIFAR, rng=stream(0, "init"))
        with pytest.raises(ConfigError):
            check_tap_compat(t, s)

    def test_parameter_names(self):
        m = build_student(MNIST, rng=stream(0, "init"))
        assert list(m.named_parameters()) == ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias",
                                              "fc.weight", "fc.bias"]
