"""Independent re-derivation of the stub context extractor's word vectors.

Each row is keyed by FNV-1a-64 over "<seed>\x1f<word>\x1f<position>", then
expanded with splitmix64 into uniform values in [-1, 1) and L2-normalised.
Prints the rows for a fixed sentence so the C++ test can freeze them.
"""

import json
import math
import sys

MASK = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = 1469598103934665603
    for b in data:
        h ^= b
        h = (h * 1099511628211) & MASK
    return h


def splitmix64(state: int):
    state = (state + 0x9E3779B97F4A7C15) & MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return state, z ^ (z >> 31)


def row(seed: str, word: str, position: int, dim: int):
    state = fnv1a64(f"{seed}\x1f{word}\x1f{position}".encode("utf-8"))
    values = []
    for _ in range(dim):
        state, out = splitmix64(state)
        values.append(2.0 * ((out >> 11) * 2.0**-53) - 1.0)
    norm = math.sqrt(sum(v * v for v in values))
    return [v / norm for v in values]


if __name__ == "__main__":
    seed = sys.argv[1] if len(sys.argv) > 1 else "42"
    words = (sys.argv[2] if len(sys.argv) > 2 else "hello quiet world").split()
    dim = int(sys.argv[3]) if len(sys.argv) > 3 else 8
    print(json.dumps([[repr(v) for v in row(seed, w, i, dim)] for i, w in enumerate(words)], indent=1))
