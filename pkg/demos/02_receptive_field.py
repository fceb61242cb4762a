"""
Receptive field and the branch tree
===================================

Each branching pool splits a feature map into its four 2x2 phases and runs
the rest of the network on every phase with the same weights. After two
pools there are 16 leaves; stitching them back interleaves the phases and
gives one prediction per input pixel.

The receptive field is checked by poisoning one input pixel with NaN and
watching which outputs turn NaN.
"""
import numpy as np

from taofcn.network import forward_dense, init_params, pad_for_dense, receptive_field, taofcn_spec

for mode in ("decimate", "shiftedmax"):
    spec = taofcn_spec(mode)
    r, stride = receptive_field(spec)
    print(f"{mode:>10}: receptive field {r}x{r}, output stride {stride}")

spec = taofcn_spec()
params = init_params(spec, 0)
image = np.random.default_rng(0).random((1, 32, 48), dtype=np.float32)

dense, tree = forward_dense(spec, params, image, return_tree=True)
leaves = tree.leaves()
print(f"\n{len(leaves)} leaves of shape {leaves[0].node.shape} -> dense map {dense.probs.shape}")

padded = pad_for_dense(image, spec)
y, x = padded.top + 10, padded.left + 20
padded.data[0, y, x] = np.nan
hit = np.isnan(forward_dense(spec, params, padded).probs).any(axis=0)
rows, cols = np.nonzero(hit)
print(f"poisoned pixel reaches rows {rows.min()}..{rows.max()}, cols {cols.min()}..{cols.max()} "
      f"({hit.sum()} outputs, expected {receptive_field(spec)[0] ** 2} minus clipping)")
