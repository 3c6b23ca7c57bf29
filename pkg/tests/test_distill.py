import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikedistill import functional as F
from spikedistill.distill import (BlurMask, DistillConfig, DistillHead, bkd_loss, blurred_restore, ld_loss,
                                  mixed_loss, sample_blur_mask, soften_logits, time_average, total_loss)
from spikedistill.errors import ConfigError, DimensionError, StateError
from spikedistill.gradcheck import check_grads
from spikedistill.models import SpikeFeature
from spikedistill.rng import stream
from spikedistill.tensor import Tensor, backward


def t64(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


class TestMask:
    def test_ratio_zero_all_ones(self):
        assert sample_blur_mask(50, 32, 0.0, stream(0, "mask")).values.min() == 1

    def test_ratio_one_all_zeros(self):
        assert sample_blur_mask(50, 32, 1.0, stream(0, "mask")).values.max() == 0

    def test_zero_fraction_04(self):
        m = sample_blur_mask(1000, 1000, 0.4, stream(1, "mask"))
        assert abs(m.zero_fraction - 0.4) < 0.002

    @pytest.mark.parametrize("ratio", [-0.1, 1.5])
    def test_out_of_range(self, ratio):
        with pytest.raises(ConfigError):
            sample_blur_mask(2, 2, ratio, stream(0, "mask"))

    def test_seeded_reproducible(self):
        a = sample_blur_mask(8, 8, 0.3, stream(5, "mask")).values
        b = sample_blur_mask(8, 8, 0.3, stream(5, "mask")).values
        np.testing.assert_array_equal(a, b)


class TestTimeAverage:
    def test_T1_identity(self):
        f = t64(np.random.default_rng(0).integers(0, 2, (1, 2, 3, 2, 2)))
        np.testing.assert_array_equal(time_average(SpikeFeature(f)).data, f.data[0])

    def test_half_rate(self):
        f = np.zeros((4, 1, 1, 1, 1))
        f[[0, 2]] = 1
        assert time_average(SpikeFeature(t64(f))).data.item() == 0.5

    def test_all_ones(self):
        assert (time_average(t64(np.ones((3, 2, 2, 1, 1)))).data == 1).all()

    def test_gradient_split_evenly(self):
        f = t64(np.ones((4, 1, 1, 1, 1)), True)
        backward(F.sum(time_average(f)))
        np.testing.assert_array_equal(f.grad, 0.25)


class TestRestore:
    def _avg(self, c=4, seed=0):
        return t64(np.random.default_rng(seed).uniform(0, 1, (2, c, 3, 3)))

    def test_no_blur_is_plain_restore(self):
        head = DistillHead(4, 6, stream(0, "init"), np.float64)
        f = self._avg()
        mask = sample_blur_mask(2, 6, 0.0, stream(0, "mask"), np.float64)
        np.testing.assert_array_equal(blurred_restore(f, mask, head).data, head.restore(head.adapter(f)).data)

    def test_masked_channel_reaches_g_as_zero(self):
        head = DistillHead(4, 4, stream(0, "init"), np.float64)
        seen = {}
        orig = head.restore1

        def spy(z):
            seen["z"] = z.data.copy()
            return orig(z)

        head.restore1 = spy
        vals = np.ones((2, 4))
        vals[1, 2] = 0
        blurred_restore(self._avg(), BlurMask(vals, 0.25), head)
        assert (seen["z"][1, 2] == 0).all() and (seen["z"][0, 2] != 0).any()

    def test_identity_head(self):
        head = DistillHead(4, 4, None, np.float64, identity=True)
        f = self._avg()
        mask = sample_blur_mask(2, 4, 0.0, stream(0, "mask"), np.float64)
        np.testing.assert_allclose(blurred_restore(f, mask, head).data, f.data, rtol=0, atol=0)

    def test_channel_mismatch_without_adapter(self):
        head = DistillHead(4, 6, stream(0, "init"), np.float64, with_adapter=False)
        with pytest.raises(StateError):
            blurred_restore(self._avg(), sample_blur_mask(2, 6, 0.1, stream(0, "mask")), head)

    def test_output_is_continuous(self):
        head = DistillHead(4, 6, stream(0, "init"), np.float64)
        out = blurred_restore(self._avg(), sample_blur_mask(2, 6, 0.15, stream(0, "mask"), np.float64), head)
        assert not np.isin(out.data, (0.0, 1.0)).all()


class TestBkd:
    def test_equal_is_zero(self):
        f = t64(np.ones((2, 3, 2, 2)))
        assert bkd_loss(f, f).item() == 0.0

    def test_all_ones_difference(self):
        assert bkd_loss(t64(np.ones((2, 3, 2, 2))), t64(np.zeros((2, 3, 2, 2)))).item() == 24.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            bkd_loss(t64(np.ones((2, 3, 2, 2))), t64(np.ones((2, 3, 2, 1))))

    def test_gradcheck(self):
        rng = np.random.default_rng(3)
        fh, ft = t64(rng.standard_normal((2, 3, 2, 2))), t64(rng.standard_normal((2, 3, 2, 2)))
        assert check_grads(lambda: bkd_loss(fh, ft), [fh]) < 1e-5

    def test_gradient_formula(self):
        rng = np.random.default_rng(4)
        fh, ft = t64(rng.standard_normal((2, 2, 2, 2)), True), t64(rng.standard_normal((2, 2, 2, 2)))
        backward(bkd_loss(fh, ft))
        np.testing.assert_allclose(fh.grad, 2 * (fh.data - ft.data), rtol=1e-14)


class TestSoften:
    def test_uniform(self):
        np.testing.assert_allclose(soften_logits(t64([[0, 0, 0]]), 3.0).data, 1 / 3)

    def test_two_class(self):
        q = soften_logits(t64([[2.0, 0.0]]), 2.0).data[0]
        e = math.e
        np.testing.assert_allclose(q, [e / (e + 1), 1 / (e + 1)], rtol=1e-14)
        assert q[0] == pytest.approx(0.7311, abs=1e-4)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=6), st.floats(0.1, 10))
    def test_property_argmax_and_normalized(self, y, tau):
        q = soften_logits(t64([y]), tau).data[0]
        assert q.sum() == pytest.approx(1.0)
        # monotone: the largest logit keeps the largest probability (ties allowed)
        assert q[int(np.argmax(y))] == q.max()


class TestLd:
    def test_uniform_four_classes_tau2(self):
        z = t64(np.zeros((3, 4)))
        assert ld_loss(z, z, 2.0).item() == pytest.approx(4 * math.log(4), rel=1e-14)

    def test_tau_squared_scaling(self):
        y = t64(np.random.default_rng(0).standard_normal((5, 4)))
        # matched distributions: the soft cross-entropy is the entropy of the same q at both temperatures
        # only when the softened distributions coincide, i.e. logits scaled with tau
        l2 = ld_loss(F.mul(y, 2.0), F.mul(y, 2.0), 2.0).item()
        l1 = ld_loss(y, y, 1.0).item()
        assert l1 == pytest.approx(l2 / 4, rel=1e-14)

    def test_matched_is_minimum(self):
        rng = np.random.default_rng(1)
        yt = t64(rng.standard_normal((4, 5)))
        floor = ld_loss(yt, yt, 2.0).item()
        for k in range(5):
            assert ld_loss(t64(rng.standard_normal((4, 5))), yt, 2.0).item() >= floor

    def test_teacher_gets_no_gradient(self):
        ys, yt = t64(np.zeros((2, 3)), True), t64(np.ones((2, 3)), True)
        backward(ld_loss(ys, yt, 2.0))
        assert yt.grad is None or not yt.grad.any()

    def test_extreme_logits_finite(self):
        ys = t64([[500.0, -500.0, 0.0]])
        yt = t64([[-500.0, 500.0, 0.0]])
        assert np.isfinite(ld_loss(ys, yt, 1.0).item())


class TestMixedAndTotal:
    def test_weights(self):
        assert mixed_loss(t64(2.0), t64(100.0), 1.0, 7e-4).item() == pytest.approx(2.07, abs=1e-12)

    def test_zero_bkd_weight(self):
        assert mixed_loss(t64(2.0), t64(100.0), 0.5, 0.0).item() == 1.0

    def test_zero_ld_weight(self):
        assert mixed_loss(t64(2.0), t64(100.0), 0.0, 0.01).item() == 1.0

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            DistillConfig(mode="kd")

    def test_none_is_cross_entropy(self):
        y = t64(np.random.default_rng(0).standard_normal((4, 3)))
        labels = np.array([0, 1, 2, 0])
        assert total_loss(y, labels, DistillConfig(mode="none")).item() == F.cross_entropy(y, labels).item()

    def test_md_zero_weights_equals_none(self):
        y = t64(np.random.default_rng(0).standard_normal((4, 3)))
        labels = np.array([0, 1, 2, 0])
        md = total_loss(y, labels, DistillConfig(mode="md", w_ld=0.0, w_bkd=0.0), t64(3.0), t64(50.0))
        assert md.item() == total_loss(y, labels, DistillConfig(mode="none")).item()

    def test_missing_term(self):
        with pytest.raises(ConfigError):
            total_loss(t64(np.zeros((1, 2))), np.array([0]), DistillConfig(mode="ld"))
