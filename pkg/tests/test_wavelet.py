import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msanet import ops
from msanet.errors import ConfigError, ShapeError
from msanet.gradcheck import check_gradients
from msanet.gradsuite import perturb_for_check
from msanet.nn import ParamInit
from msanet.tensor import Tensor
from msanet.wavelet import (
    WaveletSubbands,
    channel_attention,
    d_wavenet,
    dwt2d,
    group_wavenet,
    haar_analysis,
    idwt2d,
    init_channel_attention,
    init_d_wavenet,
    init_group_wavenet,
)

SQ2 = 1 / np.sqrt(2)


def matrix_dwt(block):
    """Separable filter-matrix oracle: rows then columns with l=(1,1)/sqrt2, h=(1,-1)/sqrt2."""
    lo = np.array([SQ2, SQ2])
    hi = np.array([SQ2, -SQ2])
    return {
        "ll": lo @ block @ lo,
        "lh": hi @ block @ lo,  # high-pass across rows
        "hl": lo @ block @ hi,  # high-pass across columns
        "hh": hi @ block @ hi,
    }


def test_block_example():
    block = np.array([[1.0, 2.0], [3.0, 4.0]])
    bands = dwt2d(Tensor(block.reshape(1, 1, 2, 2)))
    oracle = matrix_dwt(block)
    got = {k: getattr(bands, k).data.item() for k in ("ll", "lh", "hl", "hh")}
    for k in got:
        assert got[k] == pytest.approx(oracle[k])
    assert (got["ll"], got["lh"], got["hl"], got["hh"]) == pytest.approx((5, -2, -1, 0))


def test_constant_input():
    bands = dwt2d(Tensor(np.full((1, 2, 4, 6), 0.75)))
    np.testing.assert_allclose(bands.ll.data, 1.5)
    for b in (bands.lh, bands.hl, bands.hh):
        np.testing.assert_array_equal(b.data, 0)


def test_inverse_examples():
    zero = Tensor(np.zeros((1, 2, 3, 3)))
    np.testing.assert_array_equal(idwt2d(WaveletSubbands(zero, zero, zero, zero)).data, 0)
    ll = Tensor(np.full((1, 2, 3, 3), 2 * 0.4))
    out = idwt2d(WaveletSubbands(ll, zero, zero, zero))
    assert out.shape == (1, 2, 6, 6)
    np.testing.assert_allclose(out.data, 0.4, rtol=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**31 - 1))
def test_perfect_reconstruction_and_parseval(c, h2, w2, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, (1, c, 2 * h2, 2 * w2)).astype(np.float32)
    bands = dwt2d(Tensor(x))
    rec = idwt2d(bands).data
    assert np.max(np.abs(rec - x)) <= 1e-5
    energy = sum(np.sum(b.data.astype(np.float64) ** 2) for b in bands)
    assert abs(energy - np.sum(x.astype(np.float64) ** 2)) <= 1e-4 * np.sum(x.astype(np.float64) ** 2)


def test_linearity(rng):
    x = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
    y = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
    a, b = 0.7, -1.3
    lhs = haar_analysis(Tensor(a * x + b * y)).data
    rhs = a * haar_analysis(Tensor(x)).data + b * haar_analysis(Tensor(y)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)
    bx, by = dwt2d(Tensor(x)), dwt2d(Tensor(y))
    mixed = WaveletSubbands(*(Tensor(a * p.data + b * q.data) for p, q in zip(bx, by)))
    np.testing.assert_allclose(idwt2d(mixed).data, a * x + b * y, atol=1e-5)


def test_odd_dims_rejected():
    with pytest.raises(ShapeError):
        dwt2d(Tensor(np.ones((1, 1, 3, 4))))


def test_dwt_gradients(rng):
    report = check_gradients(
        lambda t: ops.sum(ops.mul(idwt2d(dwt2d(ops.mul(t["x"], t["x"]))), t["w"])),
        {"x": rng.uniform(-1, 1, (1, 2, 4, 4)), "w": rng.uniform(-1, 1, (1, 2, 4, 4))}, wrt=["x"], max_elements=100,
    )
    assert report.passed(1e-3), report.errors


# -- channel attention ---------------------------------------------------------

def _ca_weights(c, seed=0):
    init = ParamInit(seed)
    init_channel_attention(init, "ca", c)
    return init.params


def test_attention_gate_saturated(rng):
    w = _ca_weights(8)
    w["ca.up.bias"].data[:] = 50.0
    x = Tensor(rng.standard_normal((2, 8, 4, 4)).astype(np.float32))
    np.testing.assert_allclose(channel_attention(x, w).data, x.data, rtol=1e-6)


def test_attention_zero_weights_halves(rng):
    w = _ca_weights(8)
    for t in w.values():
        t.data[:] = 0
    x = Tensor(rng.standard_normal((1, 8, 3, 3)).astype(np.float32))
    np.testing.assert_allclose(channel_attention(x, w).data, x.data / 2, rtol=1e-6)


def test_attention_scales_channels_uniformly(rng):
    w = _ca_weights(8, seed=3)
    x = rng.uniform(0.5, 1.5, (1, 8, 5, 5)).astype(np.float32)
    ratio = channel_attention(Tensor(x), w).data / x
    spread = ratio.max(axis=(2, 3)) - ratio.min(axis=(2, 3))
    assert np.all(spread < 1e-5)


def test_attention_ratio_config_error():
    with pytest.raises(ConfigError):
        init_channel_attention(ParamInit(), "ca", 6)


# -- D-WaveNet / Group WaveNet -------------------------------------------------

def _dw_weights(c, use_dwt=True, seed=0):
    init = ParamInit(seed)
    init_d_wavenet(init, "dw", c, use_dwt)
    return init.params


def test_d_wavenet_zero_weights_is_identity(rng):
    w = _dw_weights(4)
    for t in w.values():
        t.data[:] = 0
    x = Tensor(rng.standard_normal((1, 4, 6, 6)).astype(np.float32))
    np.testing.assert_array_equal(d_wavenet(x, w).data, x.data)


@pytest.mark.parametrize("shape", [(1, 4, 8, 8), (2, 4, 6, 10), (1, 4, 7, 5)])
def test_d_wavenet_keeps_dims(rng, shape):
    out = d_wavenet(Tensor(rng.standard_normal(shape).astype(np.float32)), _dw_weights(4))
    assert out.shape == shape


def test_d_wavenet_spatial_variant(rng):
    w = _dw_weights(4, use_dwt=False)
    assert w["dw.l1.weight"].shape == (4, 4, 3, 3)
    out = d_wavenet(Tensor(rng.standard_normal((1, 4, 6, 6)).astype(np.float32)), w, use_dwt=False)
    assert out.shape == (1, 4, 6, 6)


def test_d_wavenet_gradients(rng):
    w = _dw_weights(4, seed=5)
    perturb_for_check(w, rng)
    inputs = {k: v.data.astype(np.float64) for k, v in w.items()}
    inputs["x"] = rng.uniform(-1, 1, (1, 4, 6, 6))
    readout = rng.uniform(-1, 1, (1, 4, 6, 6))

    def fn(t):
        return ops.sum(ops.mul(d_wavenet(t["x"], t), Tensor(readout.astype(t["x"].dtype))))

    report = check_gradients(fn, inputs, max_elements=24, directions=2, seed=1)
    assert report.passed(1e-3), report.errors


def test_group_wavenet(rng):
    init = ParamInit(2)
    init_group_wavenet(init, "gw", 4)
    w = init.params
    x = Tensor(rng.standard_normal((1, 4, 8, 8)).astype(np.float32))
    out = group_wavenet(x, w)
    assert out.shape == x.shape
    assert out.data.tobytes() == group_wavenet(x, w).data.tobytes()
    w["gw.fuse.weight"].data[:] = 0
    w["gw.fuse.bias"].data[:] = np.arange(4).reshape(1, 4, 1, 1)
    out = group_wavenet(x, w).data
    np.testing.assert_array_equal(out, np.broadcast_to(np.arange(4, dtype=np.float32).reshape(1, 4, 1, 1), out.shape))
