"""Train the default model on a handful of synthetic scenes and look at it.

The reference frame alone scores high on these scenes because it rarely
saturates, so the comparison line is a ceiling to chase, not a baseline to
beat. The acceptance run uses 2000 steps at lr 1e-3 and lands near 37 dB.

    python demos/toy_training.py [steps]
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from msanet.io import write_ppm
from msanet.metrics import psnr_mu
from msanet.model import ModelConfig
from msanet.preprocess import linearize, tone_map_array
from msanet.synthetic import gen_synthetic
from msanet.training import Sample, TrainConfig, predict, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
out = Path(tempfile.mkdtemp(prefix="msanet_demo_"))

scenes = gen_synthetic(out / "data", 8, 32, 3, seed=7)
samples = [Sample.from_synthetic(s, f"scene{i}") for i, s in enumerate(scenes)]

cfg = ModelConfig()                                      # C=16, N=3, G=3
tc = TrainConfig(lr_max=1e-3, epochs=steps // 2, seed=0)  # 8 scenes / batch 4 = 2 steps per epoch


def progress(step, epoch, lr, loss):
    if step % 50 == 0:
        print(f"step {step:5d}  lr {lr:.2e}  loss {loss:.4f}")


result = train(samples, cfg, tc, callback=progress)
print(f"{result.steps} steps in {result.seconds:.0f}s")

for s in samples[:3]:
    pred = predict(result.weights, cfg, s.ldr, s.exposure_times)
    ref_only = linearize(s.ldr[1], s.exposure_times[1])   # the middle frame on its own
    print(f"{s.name}: model {psnr_mu(pred, s.gt):6.2f} dB   reference frame alone "
          f"{psnr_mu(np.clip(ref_only, 0, 1), s.gt):6.2f} dB")
    write_ppm(out / f"{s.name}_pred.ppm", tone_map_array(pred))
    write_ppm(out / f"{s.name}_gt.ppm", tone_map_array(s.gt))
print("tone-mapped images in", out)
