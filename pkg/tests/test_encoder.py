import numpy as np
import pytest

from msanet.encoder import encode, init_encoder
from msanet.errors import ShapeError
from msanet.nn import ParamInit
from msanet.tensor import Tensor


def _weights(c=8, seed=0):
    init = ParamInit(seed)
    init_encoder(init, c)
    return init.params


@pytest.mark.parametrize("h,w", [(8, 8), (12, 20), (32, 16)])
def test_level_shapes(rng, h, w):
    levels = encode(Tensor(rng.uniform(0, 1, (2, 6, h, w)).astype(np.float32)), _weights())
    assert [lv.shape for lv in levels] == [(2, 8, h, w), (2, 8, h // 2, w // 2), (2, 8, h // 4, w // 4)]


def test_shared_weights_commute_with_batching(rng):
    w = _weights()
    xs = [rng.uniform(0, 1, (1, 6, 8, 8)).astype(np.float32) for _ in range(3)]
    single = [encode(Tensor(x), w) for x in xs]
    batched = encode(Tensor(np.concatenate(xs)), w)
    for s in range(3):
        np.testing.assert_allclose(batched[s].data, np.concatenate([p[s].data for p in single]), atol=1e-6)


def test_zero_input_zero_bias_gives_zero(rng):
    levels = encode(Tensor(np.zeros((1, 6, 8, 8), dtype=np.float32)), _weights())
    for lv in levels:
        assert not lv.data.any()


def test_translation_equivariance_on_interior(rng):
    w = _weights(4, seed=2)
    big = rng.uniform(0, 1, (1, 6, 24, 76)).astype(np.float32)
    a = encode(Tensor(big[..., :72]), w)
    b = encode(Tensor(big[..., 4:]), w)  # a 4 pixel shift is one pixel at the coarsest level
    for s in range(3):
        k, margin = 4 >> s, 24 >> s  # margin covers the receptive-field radius
        np.testing.assert_allclose(b[s].data[..., margin:-margin], a[s].data[..., margin + k:-margin + k],
                                   atol=1e-5)


def test_indivisible_dims(rng):
    with pytest.raises(ShapeError):
        encode(Tensor(np.zeros((1, 6, 10, 8), dtype=np.float32)), _weights())
