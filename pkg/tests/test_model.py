import numpy as np
import pytest

from msanet.errors import ConfigError, ShapeError, StructuralError
from msanet.gradsuite import full_model_check
from msanet.model import ModelConfig, forward, init_weights
from msanet.nn import ParamInit, count_parameters


def _inputs(rng, b=1, h=8, w=8):
    return [rng.uniform(0, 1, (b, 6, h, w)).astype(np.float32) for _ in range(3)]


def test_output_shape_and_range(rng):
    cfg = ModelConfig(channels=8, num_samples=2, num_groups=1)
    w = init_weights(cfg, seed=1)
    out = forward(_inputs(rng, b=2, h=8, w=12), w, cfg).data
    assert out.shape == (2, 3, 8, 12)
    assert np.all((out > 0) & (out < 1))


def test_deterministic(rng):
    cfg = ModelConfig(channels=4, num_samples=2, num_groups=1)
    xs = _inputs(rng)
    a = forward(xs, init_weights(cfg, seed=3), cfg).data
    b = forward(xs, init_weights(cfg, seed=3), cfg).data
    assert a.tobytes() == b.tobytes()


def test_bad_dims(rng):
    cfg = ModelConfig(channels=4, num_samples=1, num_groups=1)
    w = init_weights(cfg)
    with pytest.raises(ShapeError):
        forward(_inputs(rng, h=10, w=8), w, cfg)


def test_weight_config_mismatch(rng):
    w = init_weights(ModelConfig(channels=4, num_samples=2, num_groups=1))
    with pytest.raises(StructuralError):
        forward(_inputs(rng), w, ModelConfig(channels=8, num_samples=2, num_groups=1))
    with pytest.raises(StructuralError):
        forward(_inputs(rng), w, ModelConfig(channels=4, num_samples=2, num_groups=2))


def test_config_validation():
    for bad in ({"num_samples": 0}, {"num_groups": 4}, {"channels": 6}, {"fusion_mode": "x"}):
        with pytest.raises(ConfigError):
            ModelConfig(**bad)
    cfg = ModelConfig(channels=8, fusion_mode="add")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_count_parameters():
    assert count_parameters({}) == 0
    init = ParamInit()
    init.conv("c", 16, 16)
    assert count_parameters(init.params) == 3 * 3 * 16 * 16 + 16
    small = count_parameters(init_weights(ModelConfig(channels=8)))
    big = count_parameters(init_weights(ModelConfig(channels=16)))
    assert 3.5 < big / small < 4.1


@pytest.mark.parametrize("kw", [{"fusion_mode": "add"}, {"fusion_mode": "concat"},
                                {"multiscale": False}, {"use_dwt": False}])
def test_variants_are_drop_in(rng, kw):
    cfg = ModelConfig(channels=4, num_samples=2, num_groups=1, **kw)
    assert forward(_inputs(rng), init_weights(cfg), cfg).shape == (1, 3, 8, 8)


def test_static_scene_alignment_in_hull(rng):
    cfg = ModelConfig(channels=4, num_samples=3, num_groups=1)
    w = init_weights(cfg, seed=2)
    for name, p in w.items():
        if name.endswith("g4.weight"):
            p.data[:] = rng.normal(0, 0.3, p.shape)
    x = _inputs(rng)[0]
    trace = []
    forward([x, x, x], w, cfg, trace=trace)
    assert len(trace) == 6
    for site in trace:
        stack = np.stack([s.data for s in site["samples"]])
        out = site["aligned"].data
        assert np.all(out >= stack.min(axis=0) - 1e-5)
        assert np.all(out <= stack.max(axis=0) + 1e-5)


def test_full_model_gradients():
    report = full_model_check()
    assert report.passed(1e-2), report.max_error
