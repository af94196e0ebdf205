import hashlib

import numpy as np


def derive_seed(root: int, *names: object) -> int:
    """Stable 63-bit seed from a root seed and a path of stage names / indices."""
    key = "/".join([str(int(root))] + [str(name) for name in names])
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & ((1 << 63) - 1)


def make_rng(root: int, *names: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *names))
