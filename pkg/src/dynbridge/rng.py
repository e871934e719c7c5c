"""Counter-based normal streams keyed by (seed, path, node, tag, slot).

Slot 0 at (path, node) is the main Gaussian of that step. Higher slots
refine the step's Brownian increment by midpoint bridge splits indexed like
a binary heap: slot 1 splits the whole step, slots 2 and 3 its halves, and
so on. The drift-clip substeps and grid refinement draw from the same
slots, so a refined path is consistent with the coarse one.
"""
from __future__ import annotations

import numpy as np

from . import _core

TAG_B = 1
TAG_BETA = 2
TAG_Z0 = 3
TAG_INNER = 4
TAG_PARTICLE = 5
TAG_RESAMPLE = 6
TAG_PRIOR = 7
TAG_INNER_START = 8
MASK64 = (1 << 64) - 1


def normals(seed, paths, nodes, tag, slot=0):
    return _core.normals(int(seed) & MASK64, paths, nodes, tag, slot)


def uniforms(seed, paths, nodes, tag, slot=0):
    """Uniforms in (0, 1) from the same streams (via the normal CDF)."""
    from scipy.special import ndtr
    return ndtr(normals(seed, paths, nodes, tag, slot))


def derive_seed(seed, *words):
    """Sub-stream seed: one Philox block keyed by ``seed`` on ``words``."""
    ctr = np.zeros((1, 4), dtype=np.uint64)
    for i, w in enumerate(words[:4]):
        ctr[0, i] = np.uint64(int(w) & MASK64)
    out = _core.philox4x64(ctr, (np.uint64(int(seed) & MASK64), np.uint64(0x5EED)))
    return int(out[0, 0])


def increments(seed, paths, dt, tag, level=0):
    """Brownian increments on a grid refined ``level`` times by bridge splits.

    ``dt`` holds the coarse step sizes. Returns an array of shape
    (n_paths, n_steps * 2**level); summing each block of 2**level columns
    recovers the coarse increments exactly in law and up to round-off.
    """
    dt = np.asarray(dt, dtype=float)
    nodes = np.arange(dt.size)
    w = normals(seed, paths, nodes, tag, 0) * np.sqrt(dt)
    # blocks[h] holds the increment of heap node h over its sub-interval
    blocks = {1: w}
    for lev in range(level):
        h_len = dt / 2 ** (lev + 1)
        for heap in range(2 ** lev, 2 ** (lev + 1)):
            parent = blocks.pop(heap)
            xi = normals(seed, paths, nodes, tag, heap)
            left = 0.5 * parent + np.sqrt(0.5 * h_len) * xi
            blocks[2 * heap] = left
            blocks[2 * heap + 1] = parent - left
    order = sorted(blocks)
    stacked = np.stack([blocks[h] for h in order], axis=2)
    return stacked.reshape(stacked.shape[0], -1)


def refine_times(t, level):
    t = np.asarray(t, dtype=float)
    if level == 0:
        return t.copy()
    m = 2**level
    frac = np.arange(m) / m
    inner = (t[:-1, None] + frac[None, :] * np.diff(t)[:, None]).ravel()
    return np.concatenate([inner, t[-1:]])

