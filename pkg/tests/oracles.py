"""Brute-force reference implementations, written with plain Python loops.

They share no code with the package: each feature is recomputed from its
definition so the vectorised versions can be checked against them.
"""

import math


def _rows(D):
    return [[int(b) for b in row] for row in D]


def pop_std(values):
    """Two-pass population standard deviation."""
    n = len(values)
    mean = sum(values) / n
    return math.sqrt(sum((v - mean) ** 2 for v in values) / n)


def phi1(D):
    rows = _rows(D)
    ones = sum(sum(r) for r in rows)
    return ones / (len(rows) * len(rows[0]))


def phi2(D):
    rows = _rows(D)
    n, w = len(rows), len(rows[0])
    return pop_std([sum(rows[i][j] for i in range(n)) / n for j in range(w)])


def phi3(D):
    rows = _rows(D)
    return pop_std([sum(r) / len(r) for r in rows])


def phi5(D, block_words):
    rows = _rows(D)
    fracs = []
    for start in range(0, len(rows), block_words):
        block = rows[start:start + block_words]
        fracs.append(sum(sum(r) for r in block) / (len(block) * len(block[0])))
    return pop_std(fracs)


def phi6(counts, lo, hi):
    flat = [int(c) for row in counts for c in row]
    return sum(1 for c in flat if lo <= c <= hi) / len(flat)


def phi7(D):
    rows = _rows(D)
    w = len(rows[0])
    bins = [0] * (w + 1)
    for r in rows:
        bins[sum(r)] += 1
    return pop_std(bins)


def majority(reads):
    """Per-bit vote over a list of 2-D 0/1 matrices; a tie goes to 0."""
    n = len(reads)
    h, w = len(reads[0]), len(reads[0][0])
    counts = [[sum(int(r[i][j]) for r in reads) for j in range(w)] for i in range(h)]
    bits = [[1 if 2 * counts[i][j] > n else 0 for j in range(w)] for i in range(h)]
    return bits, counts


def tally_mean(signatures):
    h, w = len(signatures[0]), len(signatures[0][0])
    return [[sum(int(s[i][j]) for s in signatures) / len(signatures) for j in range(w)] for i in range(h)]
