"""Counter-based normal variates keyed by (seed, path, step, dimension).

Each (path, step) pair owns one Philox block of four 64-bit words, which
become four standard normals by the Box-Muller transform.  A variate
therefore depends only on its key, never on how paths are split into
chunks or which worker generates them.
"""

from __future__ import annotations

import numpy as np

DIMS_PER_BLOCK = 4
_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0
SEED_BITS = 64


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**SEED_BITS:
        raise ValueError(f"seed must be a {SEED_BITS}-bit unsigned integer")
    return seed


def raw_blocks(seed: int, step: int, path_start: int, n_paths: int) -> np.ndarray:
    """``(n_paths, 4)`` uint64 words for paths ``path_start ..`` at time step ``step``."""
    bitgen = np.random.Philox(key=check_seed(seed), counter=[path_start, step, 0, 0])
    return bitgen.random_raw(DIMS_PER_BLOCK * n_paths).reshape(n_paths, DIMS_PER_BLOCK)


def normals(seed: int, step: int, path_start: int, n_paths: int) -> np.ndarray:
    """``(n_paths, 4)`` independent standard normals for one time step."""
    words = raw_blocks(seed, step, path_start, n_paths) >> np.uint64(11)
    u = words.astype(np.float64) * _INV_2_53
    # u1 in (0, 1] keeps the logarithm finite
    u1 = 1.0 - u[:, 0::2]
    u2 = u[:, 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty((n_paths, DIMS_PER_BLOCK))
    out[:, 0::2] = r * np.cos(_TWO_PI * u2)
    out[:, 1::2] = r * np.sin(_TWO_PI * u2)
    return out
