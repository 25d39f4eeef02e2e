"""Portable seeded permutations.

xorshift64* (Vigna 2016, shifts 12/25/27, multiplier 0x2545F4914F6CDD1D) seeded
through splitmix64. Everything is plain 64-bit integer arithmetic so the same
seed yields the same permutation in any language.
"""

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *stream: int) -> int:
    """Mix extra integers (e.g. an epoch index) into a base seed."""
    s = splitmix64(seed & MASK64)
    for k in stream:
        s = splitmix64(s ^ (k & MASK64))
    return s


class XorShift64Star:
    def __init__(self, seed: int):
        self.state = splitmix64(seed & MASK64) or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def below(self, n: int) -> int:
        """Unbiased integer in ``[0, n)`` by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = ((MASK64 + 1) // n) * n
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def permutation(n: int, seed: int, *stream: int) -> list[int]:
    return XorShift64Star(derive_seed(seed, *stream)).permutation(n)
