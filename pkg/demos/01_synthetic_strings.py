"""
Synthetic digit strings
=======================

The corpus is rendered from small 7-row glyph bitmaps. Each glyph is
rescaled, slanted and inked independently, then salt-and-pepper noise is
sprinkled over the string. Every character keeps its box, which is what the
per-pixel training targets are made from.
"""
import numpy as np

from taofcn.dataset import GenParams, make_sample, render_string
from taofcn.training import BACKGROUND, make_label_map


def show(image, threshold=0.5):
    for row in image:
        print("".join("#" if v > threshold else "." for v in row))


# a clean rendering first: no jitter, no noise
clean = render_string("3.14", GenParams.no_jitter(), seed=0)
show(clean.image[0])
print("boxes (x0, y0, x1, y1):", clean.boxes)

# the default generator: random length, jitter, occasional touching glyphs
sample = make_sample(GenParams(seed=0), "train", 5)
print(f"\n{sample.sample_id}: {sample.transcript!r}, {sample.height}x{sample.width}")
show(sample.image[0])

# the label map: box cores get the class, the rest is background
labels = make_label_map(sample)
print("\nlabelled pixels per class:")
ids, counts = np.unique(labels.labels, return_counts=True)
for i, n in zip(ids, counts):
    name = "background" if i == BACKGROUND else repr("0123456789-."[i])
    print(f"  {name:>10}: {n}")
