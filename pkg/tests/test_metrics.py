import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from msanet.errors import ShapeError
from msanet.metrics import EvalReport, evaluate_pair, psnr, psnr_mu, ssim, ssim_mu
from msanet.preprocess import tone_map_array


def _pattern(n=16):
    yy, xx = np.mgrid[0:n, 0:n] / n
    return 0.5 + 0.4 * np.sin(6 * xx) * np.cos(4 * yy)


def test_psnr_examples():
    a = np.full((3, 8, 8), 0.3)
    assert psnr(a, a) == math.inf
    assert psnr(a, a + 0.1) == pytest.approx(20 * math.log10(1 / 0.1), abs=1e-9)


def test_psnr_mu_is_composition(rng):
    a, b = rng.uniform(0, 1, (2, 3, 16, 16))
    assert psnr_mu(a, b) == pytest.approx(psnr(tone_map_array(a), tone_map_array(b)), rel=1e-12)
    assert ssim_mu(a, b) == pytest.approx(ssim(tone_map_array(a), tone_map_array(b)), rel=1e-12)


def test_psnr_errors():
    with pytest.raises(ShapeError):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


def test_ssim_identity_and_inversion():
    a = _pattern()
    assert ssim(a, a) == 1.0
    assert ssim(a, 1 - a) < 1


def test_ssim_reference_oracle():
    a = _pattern()
    b = 0.5 * a + 0.25
    ours = ssim(a, b)
    ref = structural_similarity(a, b, win_size=11, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, data_range=1.0)
    assert ours < 1
    assert ours == pytest.approx(ref, abs=1e-9)


def test_ssim_multichannel_oracle(rng):
    a = rng.uniform(0, 1, (3, 20, 24))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    ref = structural_similarity(a, b, win_size=11, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, data_range=1.0, channel_axis=0)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


def test_ssim_too_small():
    with pytest.raises(ShapeError):
        ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


def test_symmetry(rng):
    a, b = rng.uniform(0, 1, (2, 3, 16, 16))
    assert psnr(a, b) == psnr(b, a)
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-6


def test_psnr_decreases_with_noise(rng):
    a = rng.uniform(0.2, 0.8, (3, 32, 32))
    noise = rng.standard_normal(a.shape)
    values = [psnr(a, a + amp * noise) for amp in (0.005, 0.01, 0.02, 0.04, 0.08)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_report_round_trip(rng):
    report = EvalReport()
    for i in range(3):
        a, b = rng.uniform(0, 1, (2, 3, 16, 16))
        report.add(f"s{i}", evaluate_pair(a, b))
    means = report.mean
    assert means["ssim_mu"] == pytest.approx(np.mean([m["ssim_mu"] for _, m in report.samples]))
    back = EvalReport.from_text(report.to_text())
    assert [n for n, _ in back.samples] == ["s0", "s1", "s2"]
    for (_, m0), (_, m1) in zip(report.samples, back.samples):
        for k in m0:
            assert m1[k] == pytest.approx(m0[k], abs=1e-6)


def test_report_identical_pair(rng):
    a = rng.uniform(0, 1, (3, 16, 16))
    report = EvalReport()
    report.add("same", evaluate_pair(a, a))
    text = report.to_text()
    assert "psnr_mu = inf" in text and "ssim_mu = 1.000000" in text
    assert math.isinf(EvalReport.from_text(text).samples[0][1]["psnr_l"])
