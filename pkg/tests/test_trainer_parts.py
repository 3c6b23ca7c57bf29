import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikedistill import checkpoint as ck
from spikedistill.config import RunConfig, from_text, load_config
from spikedistill.errors import ConfigError, FormatError, NumericalError, UsageError
from spikedistill.optim import SGDMomentum, Adam, cosine_lr, sgd_step
from spikedistill.rng import get_state, set_state, stream
from spikedistill.tensor import Tensor


def param(values, grad):
    p = Tensor(np.asarray(values, np.float64), requires_grad=True, name="w")
    p.grad = np.asarray(grad, np.float64)
    return p


class TestSgd:
    def test_vanilla(self):
        p = param([1.0, 2.0], [0.5, -1.0])
        sgd_step([p], lr=0.1)
        np.testing.assert_allclose(p.data, [0.95, 2.1])

    def test_zero_grad_fixed_point(self):
        p = param([1.0, 2.0], [0.0, 0.0])
        sgd_step([p], lr=0.1, momentum=0.9)
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_two_momentum_steps(self):
        p = param([0.0], [1.0])
        opt = SGDMomentum({"w": p}, lr=0.1, momentum=0.9)
        opt.step()
        opt.step()
        assert p.data[0] == pytest.approx(-0.29, abs=1e-15)

    def test_weight_decay(self):
        p = param([2.0], [0.0])
        SGDMomentum({"w": p}, lr=0.1, momentum=0.0, weight_decay=0.5).step()
        assert p.data[0] == pytest.approx(1.9)

    def test_non_finite_gradient_aborts(self):
        p = param([1.0], [np.nan])
        opt = SGDMomentum({"conv1.weight": p}, lr=0.1)
        with pytest.raises(NumericalError, match="conv1.weight.*step 0"):
            opt.step()
        assert p.data[0] == 1.0

    def test_clip_norm(self):
        p = param([0.0, 0.0], [30.0, 40.0])
        SGDMomentum({"w": p}, lr=1.0, momentum=0.0, clip_norm=5.0).step()
        np.testing.assert_allclose(p.data, [-3.0, -4.0])

    def test_state_roundtrip(self):
        p = param([1.0], [1.0])
        opt = SGDMomentum({"w": p}, lr=0.1)
        opt.step()
        q = param([1.0], [1.0])
        opt2 = SGDMomentum({"w": q}, lr=0.1)
        opt2.load_state_dict(opt.state_dict())
        assert opt2.step_count == 1 and opt2.velocity["w"][0] == 1.0


def test_adam_first_step_is_lr_sized():
    p = param([0.0, 0.0], [3.0, -0.01])
    Adam({"w": p}, lr=0.01).step()
    np.testing.assert_allclose(p.data, [-0.01, 0.01], rtol=1e-5)


def test_cosine_schedule():
    assert cosine_lr(0.05, 0, 10) == 0.05
    assert cosine_lr(0.05, 5, 10) == pytest.approx(0.025)
    assert cosine_lr(0.05, 10, 10) == pytest.approx(0.0)


class TestConfig:
    def test_defaults(self):
        c = RunConfig()
        assert (c.optim.kind, c.optim.lr, c.optim.momentum, c.optim.weight_decay) == ("sgd_momentum", 0.05, 0.9, 5e-4)
        assert (c.distill.w_bkd, c.distill.blur_ratio, c.distill.tau_temp, c.run.T) == (7e-4, 0.15, 2.0, 4)

    def test_text_roundtrip(self):
        c = from_text("[run]\nT = 2\nseed = 9\n[arch]\nstudent_channels = 8, 16\n")
        assert from_text(c.to_text()) == c and c.run.T == 2 and c.arch.student_channels == (8, 16)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            from_text("[run]\nepochz = 3\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            from_text("[trainer]\nepochs = 3\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="cannot parse"):
            from_text("[run]\nepochs = many\n")

    def test_invalid_mode(self):
        with pytest.raises(ConfigError):
            from_text("[distill]\nmode = kd\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(UsageError):
            load_config(tmp_path / "none.ini")

    def test_dataset_shape_consistency(self):
        with pytest.raises(ConfigError):
            from_text("[data]\ndataset = cifar10\n")


class TestCheckpoint:
    def _sample(self):
        return {
            "model/fc.weight": np.arange(6, dtype=np.float32).reshape(2, 3),
            "model/fc.bias": np.array([1.5, -2.0], np.float64),
            "rng/x/counter": np.array([1, 2, 3, 4], np.uint64),
            "meta/epoch": np.array([3], np.int64),
            "meta/role": ck.text_to_u8("student_snn"),
            "meta/scalar": np.float64(2.5).reshape(()),
        }

    def test_roundtrip_byte_identical(self, tmp_path):
        ck.save(tmp_path / "a.ckpt", self._sample())
        loaded = ck.load(tmp_path / "a.ckpt")
        ck.save(tmp_path / "b.ckpt", loaded)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        for k, v in self._sample().items():
            np.testing.assert_array_equal(loaded[k], v)
            assert loaded[k].dtype == v.dtype and loaded[k].shape == v.shape

    def test_header_layout(self):
        buf = ck.encode({"a": np.array([1.0], np.float32)})
        assert buf[:4] == b"SDCK" and int.from_bytes(buf[4:8], "little") == 1
        assert int.from_bytes(buf[8:12], "little") == 1
        assert int.from_bytes(buf[12:16], "little") == 1 and buf[16:17] == b"a"
        assert buf[17] == 0 and buf[18] == 1  # f32, rank 1

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            ck.decode(b"XXXX" + bytes(8))

    def test_truncated(self):
        buf = ck.encode(self._sample())
        with pytest.raises(FormatError, match="truncated"):
            ck.decode(buf[:-3])

    def test_trailing_bytes(self):
        with pytest.raises(FormatError, match="trailing"):
            ck.decode(ck.encode(self._sample()) + b"\x00")

    def test_text_helpers(self):
        assert ck.u8_to_text(ck.text_to_u8("héllo")) == "héllo"
        assert ck.sub({"a/b": 1, "a/c": 2, "ab/d": 3}, "a") == {"b": 1, "c": 2}


@settings(max_examples=25, deadline=None)
@given(st.dictionaries(st.text("abc/._", min_size=1, max_size=8),
                       st.lists(st.floats(allow_nan=False, width=32), max_size=5), max_size=4))
def test_property_checkpoint_roundtrip(d):
    tensors = {k: np.asarray(v, np.float32) for k, v in d.items()}
    buf = ck.encode(tensors)
    back = ck.decode(buf)
    assert ck.encode(back) == buf
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])


def test_rng_state_roundtrip():
    g = stream(4, "mask")
    g.random(7)
    state = get_state(g)
    expected = g.random(5)
    h = stream(0, "mask")
    set_state(h, state)
    np.testing.assert_array_equal(h.random(5), expected)


def test_rng_purposes_independent():
    assert not np.array_equal(stream(1, "mask").random(4), stream(1, "shuffle").random(4))
    with pytest.raises(KeyError):
        stream(1, "dropout")
