import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msanet.errors import DomainError
from msanet.preprocess import ExposureStack, build_input, delinearize, linearize, tone_map, tone_map_array
from msanet.tensor import Tensor


def test_linearize_examples():
    assert linearize(np.array(1.0), 1.0, 2.2) == pytest.approx(1.0)
    assert linearize(np.array(0.0), 4.0, 2.2) == 0.0
    assert linearize(np.array(0.5), 1.0, 2.2) == pytest.approx(math.exp(2.2 * math.log(0.5)), rel=1e-12)
    assert math.exp(2.2 * math.log(0.5)) == pytest.approx(0.21764, abs=1e-5)


def test_linearize_rejects_bad_exposure():
    with pytest.raises(DomainError):
        linearize(np.ones(3), 0.0)
    with pytest.raises(DomainError):
        linearize(np.ones(3), -1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0), st.sampled_from([0.25, 1.0, 4.0]))
def test_delinearize_round_trip(value, t):
    radiance = value / t  # radiance * t lands in [0, 1]
    ldr = delinearize(np.array(radiance), t)
    assert linearize(ldr, t) == pytest.approx(radiance, abs=1e-5)


def _stack(rng, h=8, w=8, times=(0.25, 1.0, 4.0)):
    return ExposureStack([rng.uniform(0, 1, (1, 3, h, w)) for _ in range(3)], times)


def test_build_input_shapes(rng):
    stack = _stack(rng, 8, 12)
    xs = build_input(stack)
    assert len(xs) == 3
    for x, im in zip(xs, stack.images):
        assert x.shape == (1, 6, 8, 12)
        np.testing.assert_array_equal(x[:, :3], im)  # raw channels untouched
        assert np.all(x[:, 3:] >= 0)


def test_build_input_identical_frames(rng):
    im = rng.uniform(0, 1, (1, 3, 4, 4))
    stack = ExposureStack([im, im, im], [1.0, 1.0 + 1e-9, 1.0 + 2e-9])
    xs = build_input(stack)
    np.testing.assert_allclose(xs[0], xs[1], rtol=1e-6)
    np.testing.assert_allclose(xs[1], xs[2], rtol=1e-6)


def test_build_input_equal_radiance_agrees(rng):
    # render three exposures of one radiance map (kept below saturation) and check the round trip
    radiance = rng.uniform(0.0, 0.2, (1, 3, 6, 6))
    times = (0.25, 1.0, 4.0)
    stack = ExposureStack([delinearize(radiance, t) for t in times], times)
    xs = build_input(stack)
    for x in xs:
        np.testing.assert_allclose(x[:, 3:], radiance, atol=1e-5)


def test_exposure_stack_invariants(rng):
    with pytest.raises(DomainError):
        _stack(rng, times=(1.0, 0.25, 4.0))
    stack = ExposureStack.from_ev([rng.uniform(-0.5, 1.5, (1, 3, 4, 4)) for _ in range(3)], [-2, 0, 2])
    assert stack.exposure_times == [0.25, 1.0, 4.0]
    for im in stack.images:  # decode artefacts are clamped
        assert im.min() >= 0 and im.max() <= 1


def test_tone_map_examples():
    t = tone_map(Tensor(np.array([0.0, 1.0, 0.5]).reshape(1, 3, 1, 1)), 5000).data.ravel()
    assert t[0] == 0.0
    assert t[1] == pytest.approx(1.0)
    assert t[2] == pytest.approx(math.log(2501) / math.log(5001), rel=1e-12)
    assert math.log(2501) / math.log(5001) == pytest.approx(0.9186, abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_tone_map_monotone(a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    if hi - lo < 1e-12:
        return
    assert tone_map_array(lo) < tone_map_array(hi)


def test_tone_map_range():
    x = np.linspace(0, 1, 101)
    t = tone_map_array(x)
    assert t.min() == 0.0 and t.max() == pytest.approx(1.0)
    assert np.all(np.diff(t) > 0)


def test_tone_map_rejects_negative():
    with pytest.raises(DomainError):
        tone_map(Tensor(np.array(-0.1)))
