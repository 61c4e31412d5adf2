"""
Training a toy model and pasting with it
========================================

Real training runs for days.  Here a narrow network memorises one image for
a couple of hundred iterations, which is enough to watch the reconstruction
loss fall, then the checkpoint is used on a larger canvas than it was
trained on.

Run from the repository root:  python demos/03_train_and_paste.py [out_dir]
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from smartpaste import TrainConfig, load_checkpoint, load_corpus, paste_images, train, write_image

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="smartpaste-train-"))
(out / "corpus").mkdir(parents=True, exist_ok=True)

yy, xx = np.mgrid[0:64, 0:64] / 64.0
img = np.stack([0.5 + 0.35 * np.cos(2 * np.pi * (a * xx + b * yy)) for a, b in ((1, 2), (2, 1), (3, 3))], axis=-1)
write_image(out / "corpus" / "one.png", img)

# %% memorise: no geometric jitter, no colour change, always the same mask
cfg = TrainConfig(batch_size=1, iterations=200, sigma=0.0, identity_shading=True, fixed_mask=True, base_channels=8)
state, history = train(load_corpus(out / "corpus"), cfg, log_path=out / "metrics.log", checkpoint_path=out / "toy.ckpt")
for m in history[::40] + history[-1:]:
    print(f"iter {m['iter']:4d}  l_rec {m['l_rec']:.4f}  wasserstein {m['wasserstein']:+.4f}  gp {m['gp']:.4f}")

# %% the generator is fully convolutional: paste on a 128x192 canvas
state = load_checkpoint(out / "toy.ckpt")
h, w = 128, 192
yy, xx = np.mgrid[0:h, 0:w] / 64.0
target = np.stack([0.4 + 0.2 * np.sin(xx + c) * np.cos(yy) for c in (0.0, 1.0, 2.0)], axis=-1)
source = np.clip(target * 0.6 + 0.3, 0, 1)
mask = np.zeros((h, w, 1))
mask[40:88, 60:130] = 1
result = paste_images(state, source, target, mask)
ctx = mask[..., 0] == 0
print("output", result.shape, "context untouched:", np.array_equal(result[ctx], target[ctx]))
write_image(out / "pasted.png", result)
print("wrote", out)
