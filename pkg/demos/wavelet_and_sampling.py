"""Haar bands of a synthetic scene, then hand-built sampling maps pulling a
shifted copy of it back into place.

    python demos/wavelet_and_sampling.py
"""
import numpy as np

from msanet.sam import SamplingMap, aggregate, correspondence_weights, sample_features
from msanet.synthetic import make_sample
from msanet.tensor import Tensor
from msanet.wavelet import dwt2d, idwt2d

rng = np.random.default_rng(0)
scene = make_sample(rng, 32, 3)
x = Tensor(np.log(scene["gt"])[None])          # (1, 3, 32, 32), log radiance

bands = dwt2d(x)
for name, band in zip(("ll", "lh", "hl", "hh"), bands):
    print(f"{name}: shape {band.shape}, energy {np.sum(band.data.astype(np.float64) ** 2):10.2f}")
print("energy of x:", round(float(np.sum(x.data.astype(np.float64) ** 2)), 2))
print("max reconstruction error:", np.abs(idwt2d(bands).data - x.data).max())

# Dot-product scores compare feature vectors, so describe each pixel by its
# 5x5 neighbourhood, centred and normalised; the learned encoder plays this
# role inside the network.
def describe(img, temperature=10.0):
    taps = [np.roll(img, (dy, dx), axis=(-2, -1)) for dy in range(-2, 3) for dx in range(-2, 3)]
    f = np.concatenate(taps, axis=1)
    f = f - f.mean(axis=1, keepdims=True)
    f /= np.linalg.norm(f, axis=1, keepdims=True) + 1e-6
    return Tensor((np.sqrt(temperature) * f).astype(np.float32))


# move the whole image two pixels right; sample (0, +2) reads it back exactly,
# the other two samples are decoys
moved = np.roll(x.data, 2, axis=-1)
fields = np.zeros((1, 6, 32, 32), dtype=np.float32)
fields[:, 1] = 2.0                                # sample 0: dx = +2
fields[:, 2], fields[:, 3] = 1.5, 0.5             # sample 1
fields[:, 4], fields[:, 5] = -1.0, 2.5            # sample 2
smap = SamplingMap(Tensor(fields))

# weights come from the descriptors, the aggregation applies them to the image
w = correspondence_weights(sample_features(describe(moved), smap), describe(x.data))
print("mean weight per sample:", w.data.mean(axis=(0, 2, 3)).round(3))
out = aggregate(sample_features(Tensor(moved), smap), w)
interior = (..., slice(4, -4), slice(4, -4))
print("interior error, aggregated:   ", np.abs(out.data - x.data)[interior].mean())
print("interior error, no alignment: ", np.abs(moved - x.data)[interior].mean())
