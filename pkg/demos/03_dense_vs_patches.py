"""
One pass instead of one patch per pixel
=======================================

A plain patch CNN classifies a single r x r window. Sliding it over every
pixel repeats almost all of the convolution work. The tree-arranged network
computes the same numbers in one pass; this script checks they agree and
times both.
"""
import numpy as np

from taofcn.experiment import bench_dense_vs_patch
from taofcn.network import dense_by_patches, forward_dense, init_params, taofcn_spec

spec = taofcn_spec()
params = init_params(spec, 1)
image = np.random.default_rng(1).random((1, 32, 40), dtype=np.float32)

dense = forward_dense(spec, params, image)
naive = dense_by_patches(spec, params, image)
print("max |dense - per-patch| =", float(np.abs(dense.probs - naive.probs).max()))

for r in bench_dense_vs_patch(spec, [(32, 80), (32, 160)], reps=1):
    print(f"{r.height}x{r.width}: dense {r.dense_seconds * 1e3:.1f} ms, "
          f"per-patch {r.patch_seconds:.2f} s, speedup {r.speedup:.0f}x")
