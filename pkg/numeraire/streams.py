# Counter-based random streams keyed by (seed, stream, path)

import zlib

import numpy as np

TREE_DUALITY = "tree-duality"
TREE_STRATEGIES = "tree-strategies"
DIFFUSION_PATHS = "diffusion-paths"
LOGNORMAL_PATHS = "lognormal-paths"


def stream_id(name):
    # Stable integer id of a named stream.
    return zlib.crc32(name.encode("utf-8"))


def generator(seed, stream, path=0):
    """
    @brief      Independent generator for one (seed, stream, path) triple.

    @param      seed    Non-negative integer run seed
    @param      stream  Stream name or integer id
    @param      path    Path (or work unit) index

    @return     numpy Generator over a Philox bit generator.
    """
    if isinstance(stream, str):
        stream = stream_id(stream)
    if seed < 0 or path < 0:
        raise ValueError("seed and path must be non-negative")

    key = np.random.SeedSequence([int(seed), int(stream), int(path)])
    return np.random.Generator(
        np.random.Philox(key=key.generate_state(2, np.uint64))
    )


def normals(seed, stream, first, count, shape):
    # Standard normals of `shape` for paths first..first+count-1, one row per path.
    out = np.empty((count,) + tuple(shape))
    for i in range(count):
        out[i] = generator(seed, stream, first + i).standard_normal(shape)
    return out
