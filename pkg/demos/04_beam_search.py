"""
Decoding a column series
========================

The dense map is averaged down each column, giving one probability vector
per column. A beam search then tiles the columns with segments, each one a
character or background, and keeps the tiling with the best mean
probability. For short series the exhaustive enumerator confirms the result.
"""
import numpy as np

from taofcn.decoder import BeamConfig, ColumnSeries, beam_search, count_paths, exhaustive_decode

charset = "0123456789-."
bg = len(charset)
# columns: background, '4' twice, background, '2' three times, background
peaks = [bg, 4, 4, bg, 2, 2, 2, bg]
rng = np.random.default_rng(0)
probs = rng.dirichlet(np.full(bg + 1, 0.3), size=len(peaks)) * 0.3
probs[np.arange(len(peaks)), peaks] += 0.7
series = ColumnSeries(probs, charset)

beam = beam_search(series, BeamConfig(beam_width=16, min_char_width=2))
print("beam:      ", repr(beam.transcript), f"score {beam.score:.4f}")
print("segments:  ", beam.path.segments)

print(f"enumerating {count_paths(series.width, bg + 1, 2):,} tilings ...")
best = exhaustive_decode(series, 2)
print("exhaustive:", repr(best.transcript), f"score {best.score:.4f}")
