"""Oracle suites shared by ``taofcn selftest`` and the acceptance tests.

Each suite returns the raw measurements; thresholds are applied by callers.
"""
from __future__ import annotations

import numpy as np

from .decoder import BeamConfig, ColumnSeries, beam_search, exhaustive_decode
from .network import (
    BRANCH_MODES,
    BranchPool,
    Conv,
    DenseCache,
    Head,
    NetworkSpec,
    backward_dense,
    dense_by_patches,
    flat_params,
    forward_dense,
    init_params,
    pad_for_dense,
    split_tree,
    stitch,
)
from .tensor_core import ConvKernel, interleave_phases, split_phases
from .training import PixelLabelMap, pixel_cross_entropy

PATCH_TOL = 1e-5
GRAD_TOL = 1e-4
FD_STEP = 1e-3
SCORE_TOL = 1e-9


def random_spec(rng: np.random.Generator, mode: str, max_branches: int = 2) -> NetworkSpec:
    layers = []
    branches = int(rng.integers(0, max_branches + 1))
    for b in range(branches + 1):
        for _ in range(int(rng.integers(1, 3))):
            layers.append(Conv(int(rng.choice([1, 3])), int(rng.integers(1, 5))))
        if b < branches:
            layers.append(BranchPool(mode))
    layers.append(Head(int(rng.integers(1, 5))))
    return NetworkSpec(layers, int(rng.integers(1, 3)), f"random-{mode}")


def random_params(spec: NetworkSpec, rng: np.random.Generator, dtype=np.float32) -> list[ConvKernel]:
    params = init_params(spec, int(rng.integers(2 ** 31)))
    return [ConvKernel(p.weights.astype(dtype), rng.normal(0, 0.2, p.bias.shape).astype(dtype)) for p in params]


def patch_equivalence(n: int = 20, mode: str = "decimate", seed: int = 0) -> list[float]:
    """Max |dense - per-patch| over every pixel, for ``n`` random (spec, params, image) triples."""
    rng = np.random.default_rng([seed, BRANCH_MODES.index(mode)])
    diffs = []
    for _ in range(n):
        spec = random_spec(rng, mode)
        params = random_params(spec, rng)
        h, w = int(rng.integers(5, 17)), int(rng.integers(5, 25))
        image = rng.random((spec.input_channels, h, w), dtype=np.float32)
        padded = pad_for_dense(image, spec)
        dense = forward_dense(spec, params, padded)
        naive = dense_by_patches(spec, params, padded)
        assert dense.probs.shape[1:] == (h, w)
        diffs.append(float(np.abs(dense.probs - naive.probs).max()))
    return diffs


def gradient_spec(mode: str = "decimate") -> NetworkSpec:
    return NetworkSpec([Conv(3, 3), BranchPool(mode), Conv(3, 4), Head(3)], 1, f"gradcheck-{mode}")


def _loss(spec, params, padded, labels, cache=None):
    dense = forward_dense(spec, params, padded, cache=cache)
    return pixel_cross_entropy(dense, labels)


def _kink_signature(spec, params, padded):
    cache = DenseCache()
    forward_dense(spec, params, padded, cache=cache)
    sig = []
    for rec in cache.records:
        if rec[0] == "conv" and rec[3] is not None:
            sig.append(rec[3] > 0)
        elif rec[0] == "shiftedmax":
            sig.extend(rec[1])
    return sig


def _same_signature(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def gradient_check(n: int = 10, mode: str = "decimate", seed: int = 0, height: int = 8, width: int = 12):
    """Analytic vs central-difference gradients of the end-to-end pixel loss.

    Runs in float64. Returns ``(max_rel_errors, n_params)``. An instance whose
    ReLU masks or pooling winners change under a +/- step is redrawn, since
    finite differences are meaningless across a kink.
    """
    spec = gradient_spec(mode)
    rng = np.random.default_rng([seed, 7, BRANCH_MODES.index(mode)])
    errors = []
    n_params = None
    while len(errors) < n:
        params = random_params(spec, rng, np.float64)
        n_params = sum(a.size for a in flat_params(params))
        image = rng.random((1, height, width))
        padded = pad_for_dense(image, spec)
        labels = PixelLabelMap(rng.integers(0, spec.num_channels_out, (height, width)),
                               rng.random((height, width)))
        cache = DenseCache()
        _, g = _loss(spec, params, padded, labels, cache)
        analytic = flat_params(backward_dense(spec, cache, g))
        base_sig = _kink_signature(spec, params, padded)
        flat = flat_params(params)
        worst, kinked = 0.0, False
        for arr, ga in zip(flat, analytic):
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + FD_STEP
                lp, _ = _loss(spec, params, padded, labels)
                sp = _kink_signature(spec, params, padded)
                arr[idx] = orig - FD_STEP
                lm, _ = _loss(spec, params, padded, labels)
                sm = _kink_signature(spec, params, padded)
                arr[idx] = orig
                if not (_same_signature(base_sig, sp) and _same_signature(base_sig, sm)):
                    kinked = True
                    break
                num = (lp - lm) / (2 * FD_STEP)
                a = float(ga[idx])
                rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
                worst = max(worst, rel)
            if kinked:
                break
        if not kinked:
            errors.append(worst)
    return errors, n_params


def random_series(rng: np.random.Generator, max_width: int = 8, max_classes: int = 4) -> ColumnSeries:
    w = int(rng.integers(1, max_width + 1))
    c = int(rng.integers(2, max_classes + 1))
    probs = rng.dirichlet(np.full(c, 0.7), size=w)
    return ColumnSeries(probs, "abcdefgh"[: c - 1])


def beam_equivalence(n: int = 100, seed: int = 0, beam_width: int = 10_000, min_char_width: int = 2):
    """``(series, beam result, exhaustive result)`` for ``n`` random small series."""
    rng = np.random.default_rng([seed, 11])
    out = []
    for _ in range(n):
        s = random_series(rng)
        out.append((s, beam_search(s, BeamConfig(beam_width, min_char_width)),
                    exhaustive_decode(s, min_char_width)))
    return out


def stitch_roundtrip(n: int = 50, seed: int = 0) -> list[bool]:
    """Split-then-stitch identity and the phase partition, bit-exact, depths 0..2."""
    rng = np.random.default_rng([seed, 13])
    ok = []
    for i in range(n):
        depth = i % 3
        j = 2 ** depth
        t = rng.normal(size=(int(rng.integers(1, 4)), j * int(rng.integers(1, 6)), j * int(rng.integers(1, 6))))
        t = t.astype(np.float32)
        tree = split_tree(t, depth)
        leaves = np.stack([leaf.node for leaf in tree.leaves()])
        # every unit appears exactly once across the leaves
        partition = np.array_equal(np.sort(leaves.ravel()), np.sort(t.ravel()))
        round_trip = np.array_equal(stitch(tree, depth), t)
        stack = t[None]
        for _ in range(depth):
            stack = split_phases(stack)
        for _ in range(depth):
            stack = interleave_phases(stack)
        ok.append(partition and round_trip and np.array_equal(stack[0], t))
    return ok


def run_all(report=print) -> int:
    """Run every suite at its tolerance; returns the number of failed suites."""
    failures = 0

    def line(name, passed, detail):
        nonlocal failures
        failures += not passed
        report(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")

    for mode in BRANCH_MODES:
        d = patch_equivalence(20, mode)
        line(f"patch equivalence ({mode})", max(d) <= PATCH_TOL, f"max abs diff {max(d):.2e}")
        errs, n_params = gradient_check(10, mode)
        line(f"gradient check ({mode}, {n_params} params)", max(errs) <= GRAD_TOL, f"max rel err {max(errs):.2e}")
    res = beam_equivalence(100)
    bad = sum(b.transcript != e.transcript or abs(b.score - e.score) > SCORE_TOL for _, b, e in res)
    line("beam vs exhaustive", bad == 0, f"{bad} mismatches in {len(res)} series")
    ok = stitch_roundtrip(50)
    line("stitch round trip", all(ok), f"{sum(ok)}/{len(ok)} exact")
    return failures
