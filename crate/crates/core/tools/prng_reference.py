#!/usr/bin/env python3
"""Reference implementation of the simulator PRNG (xorshift64* seeded by
splitmix64, Box-Muller cosine branch). Prints the first gaussian deviates for
a seed so the Rust stream can be checked against an independent program.

usage: prng_reference.py SEED [COUNT]
"""
import math
import sys

M64 = (1 << 64) - 1


def splitmix64(seed):
    z = (seed + 0x9E3779B97F4A7C15) & M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


class XorShift64Star:
    def __init__(self, seed):
        s = splitmix64(seed)
        self.state = s if s != 0 else 0x9E3779B97F4A7C15

    def next_u64(self):
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & M64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & M64

    def next_f64(self):
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def next_gaussian(self):
        u1 = 1.0 - self.next_f64()
        u2 = self.next_f64()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


if __name__ == "__main__":
    seed = int(sys.argv[1])
    count = int(sys.argv[2]) if len(sys.argv) > 2 else 1
    rng = XorShift64Star(seed)
    for _ in range(count):
        print(repr(rng.next_gaussian()))
