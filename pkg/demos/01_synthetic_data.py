"""Synthetic normal/lesion images: generate, inspect, write to disk, read back.

    python3 demos/01_synthetic_data.py [out_dir]
"""
import sys
import tempfile

import numpy as np

from pdd.data import SyntheticSpec, background, gen_abnormal, gen_normal, load_dataset, write_dataset

spec = SyntheticSpec(n_train_normal=20, n_test_normal=5, n_test_abnormal=5)

# A normal image is a few Gaussian blobs plus weak pixel noise.
x = gen_normal(spec, 0)
print("normal sample", x.id, "shape", x.image.shape, "range", x.image.min().round(3), x.image.max().round(3))

# An abnormal image reuses the same background generator and adds one disk.
a = gen_abnormal(spec, 0)
bg = background(spec, "test_abnormal", 0)
diff = np.abs(a.image[0] - bg)
print("lesion area", int(a.mask.sum()), "px; mean |change| inside", diff[a.mask].mean().round(3),
      "outside", diff[~a.mask].mean())


def ascii(img, width=32):
    step = img.shape[1] // width
    ramp = " .:-=+*#%@"
    small = img[::step * 2, ::step]
    return "\n".join("".join(ramp[min(int(v * len(ramp)), len(ramp) - 1)] for v in row) for row in small)


print(ascii(a.image[0]))

# Round trip through 8-bit PGM files.
out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="pdd_data_")
written = write_dataset(spec, out)
loaded = load_dataset(out)
print("wrote", out, loaded.counts())
print("manifest digests agree:", written.digest() == loaded.digest())
