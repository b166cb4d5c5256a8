import os
import subprocess
import sys

import numpy as np
import pytest

from maskedit import _kernels_py, tensor

try:
    from maskedit import _kernels as compiled
except ImportError:
    compiled = None

needs_ext = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


@needs_ext
class TestKernelAgreement:
    def test_conv(self, rng):
        x = rng.standard_normal((3, 16, 9, 7)).astype(np.float32)
        w = rng.standard_normal((8, 16, 3, 3)).astype(np.float32)
        b = rng.standard_normal(8).astype(np.float32)
        np.testing.assert_allclose(compiled.conv2d_3x3_batch(x, w, b),
                                   _kernels_py.conv2d_3x3_batch(x, w, b), atol=1e-5)

    def test_group_norm(self, rng):
        x = (rng.standard_normal((2, 32, 5, 5)) * 4 + 3).astype(np.float32)
        g = rng.standard_normal(32).astype(np.float32)
        be = rng.standard_normal(32).astype(np.float32)
        np.testing.assert_allclose(compiled.group_norm_batch(x, 8, g, be, 1e-5),
                                   _kernels_py.group_norm_batch(x, 8, g, be, 1e-5), atol=1e-5)

    def test_softmax(self, rng):
        x = (rng.standard_normal((17, 33)) * 30).astype(np.float32)
        np.testing.assert_allclose(compiled.softmax_rows(x), _kernels_py.softmax_rows(x), atol=1e-6)

    def test_read_only_inputs(self, rng):
        x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
        x.setflags(write=False)
        w = np.zeros((1, 2, 3, 3), np.float32)
        w.setflags(write=False)
        assert compiled.conv2d_3x3_batch(x, w, np.zeros(1, np.float32)).shape == (1, 1, 4, 4)


_FORWARD_SCRIPT = """
import sys, numpy as np, maskedit
from maskedit.denoiser import AttentionMode, DenoiserModel
from maskedit.conditioning import embed_text
x = np.random.default_rng(5).standard_normal((3, 9, 4, 8)).astype(np.float32)
out = DenoiserModel.from_seed(42).forward(x, 499, embed_text("a cat"), AttentionMode.EXTENDED_ACROSS_BATCH)
sys.stdout.buffer.write(maskedit.BACKEND.encode() + b"\\n")
sys.stdout.buffer.write(out.astype("<f4").tobytes())
"""


def _run_forward(pure: bool):
    env = dict(os.environ)
    env.pop("MASKEDIT_PURE_PYTHON", None)
    if pure:
        env["MASKEDIT_PURE_PYTHON"] = "1"
    raw = subprocess.run([sys.executable, "-c", _FORWARD_SCRIPT], env=env, capture_output=True, check=True).stdout
    name, _, payload = raw.partition(b"\n")
    return name.decode(), np.frombuffer(payload, dtype="<f4").reshape(3, 4, 4, 8)


def test_env_forces_python():
    name, out = _run_forward(pure=True)
    assert name == "python"
    assert np.all(np.isfinite(out))


@needs_ext
def test_full_forward_agrees():
    name_c, out_c = _run_forward(pure=False)
    name_p, out_p = _run_forward(pure=True)
    assert (name_c, name_p) == ("cython", "python")
    np.testing.assert_allclose(out_c, out_p, atol=1e-5)


def test_tensor_uses_selected_backend():
    from maskedit import _backend

    assert tensor.kernels is _backend.kernels
