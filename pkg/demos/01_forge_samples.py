"""
Forging training pairs
======================

A training pair is made from a single image: a random region is corrupted
(colour shift plus a small projective wobble) and pasted back, and the
network has to undo the corruption.  No second image is needed.

Run from the repository root:  python demos/01_forge_samples.py [out_dir]
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from smartpaste import ForgeConfig, SeededRng, load_corpus, write_image
from smartpaste.photometric import ColorParams, color_transform
from smartpaste.sample_forge import forge_batch, write_sample

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="smartpaste-forge-"))
corpus_dir = out / "corpus"
corpus_dir.mkdir(parents=True, exist_ok=True)

# %% a tiny synthetic corpus: two smooth colour fields
yy, xx = np.mgrid[0:96, 0:96] / 96.0
for k in range(2):
    img = np.stack([0.5 + 0.4 * np.sin(2 * np.pi * (xx * (k + 1) + yy * c)) for c in (0.5, 1.0, 1.5)], axis=-1)
    write_image(corpus_dir / f"field{k}.png", img)
corpus = load_corpus(corpus_dir)
print("corpus:", [p.name for p in corpus.paths], corpus[0].shape)

# %% the colour model on its own: brightness, contrast, hue, saturation
img = corpus[0]
p = ColorParams(k1=1.3, delta1=0.1, lam=(0.8, 1.0, 1.2), delta2=0.05)
shifted = color_transform(img, p)
print("mean colour before", img.mean(axis=(0, 1)).round(3), "after", shifted.mean(axis=(0, 1)).round(3))

# %% full samples; every sample is a pure function of (seed, sample id)
cfg = ForgeConfig(crop=64, sigma=15.0)
samples = forge_batch(corpus, cfg, seed=7, sample_ids=range(4))
for k, s in enumerate(samples):
    m = s.mask[..., 0] == 1
    diff = np.abs(s.input[..., :3] - s.ground_truth)
    print(f"sample {k}: mask covers {m.mean():.0%}, mean |change| inside {diff[m].mean():.3f}, outside {diff[~m].max():.3f}")
    write_sample(out, f"{k:06d}", s)

# the same id always gives the same sample, regardless of batch composition
again = forge_batch(corpus, cfg, seed=7, sample_ids=[3])[0]
print("replay identical:", np.array_equal(again.input, samples[3].input))
print("wrote", out)
