import numpy as np
import pytest

from spikedistill import kernels
from spikedistill.kernels import _npkernels

compiled = kernels.compiled_backend
needs_ext = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


@pytest.fixture
def restore_backend():
    name = kernels.BACKEND_NAME
    yield
    kernels.use_backend(name)


def _conv_setup(dtype, seed=0):
    rng = np.random.default_rng(seed)
    xp = rng.standard_normal((3, 4, 9, 8)).astype(dtype)
    oh, ow = (9 - 3) // 2 + 1, (8 - 3) // 2 + 1
    return xp, oh, ow


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_im2col_col2im_backends_bit_identical(dtype):
    xp, oh, ow = _conv_setup(dtype)
    a = compiled.im2col(xp, 3, 3, 2, oh, ow)
    b = _npkernels.im2col(xp, 3, 3, 2, oh, ow)
    np.testing.assert_array_equal(a, b)
    back_a = compiled.col2im(a, 3, 4, 9, 8, 3, 3, 2, oh, ow)
    back_b = _npkernels.col2im(b, 3, 4, 9, 8, 3, 3, 2, oh, ow)
    np.testing.assert_array_equal(back_a, back_b)


def test_col2im_is_adjoint_of_im2col():
    xp, oh, ow = _conv_setup(np.float64, 3)
    cols = np.random.default_rng(4).standard_normal(_npkernels.im2col(xp, 3, 3, 2, oh, ow).shape)
    lhs = float((_npkernels.im2col(xp, 3, 3, 2, oh, ow) * cols).sum())
    rhs = float((xp * _npkernels.col2im(cols, 3, 4, 9, 8, 3, 3, 2, oh, ow)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-12)


@needs_ext
@pytest.mark.parametrize("pure_if", [False, True])
@pytest.mark.parametrize("detach", [False, True])
def test_neuron_kernels_backends_agree(pure_if, detach):
    rng = np.random.default_rng(5)
    i = rng.uniform(-1, 3, 5000)
    v = rng.uniform(-0.5, 1, 5000)
    fa = compiled.lif_forward(i, v, 1.0, 0.0, 2.0, 4.0, pure_if, False)
    fb = _npkernels.lif_forward(i, v, 1.0, 0.0, 2.0, 4.0, pure_if, False)
    for x, y in zip(fa, fb):
        np.testing.assert_allclose(x, y, rtol=1e-14, atol=0)
    s, _, h = fa
    gs, gv = rng.standard_normal(5000), rng.standard_normal(5000)
    ba = compiled.lif_backward(gs, gv, s, h, 1.0, 0.0, 2.0, 4.0, pure_if, detach)
    bb = _npkernels.lif_backward(gs, gv, s, h, 1.0, 0.0, 2.0, 4.0, pure_if, detach)
    for x, y in zip(ba, bb):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-15)


def test_use_backend_switch(restore_backend):
    kernels.use_backend("numpy")
    assert kernels.BACKEND_NAME == "numpy"
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


def test_training_step_identical_across_backends(restore_backend):
    from spikedistill import functional as F
    from spikedistill.models import ArchConfig, build_student, forward_student
    from spikedistill.rng import stream
    from spikedistill.tensor import Tensor, backward

    if compiled is None:
        pytest.skip("compiled kernels not built")
    x = Tensor(np.random.default_rng(0).standard_normal((4, 1, 28, 28)))
    grads = {}
    for name in ("numpy", "cython"):
        kernels.use_backend(name)
        m = build_student(ArchConfig(student_channels=(4, 4)), rng=stream(0, "init"), dtype=np.float64)
        logits, _ = forward_student(m, x.detach(), 3)
        backward(F.cross_entropy(logits, np.array([0, 1, 2, 3])))
        grads[name] = {k: p.grad for k, p in m.named_parameters().items()}
    for k in grads["numpy"]:
        np.testing.assert_allclose(grads["numpy"][k], grads["cython"][k], rtol=1e-10, atol=1e-14)
