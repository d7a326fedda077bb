"""Small numeric helpers shared across modules."""

import hashlib
import math

import numpy as np


def round_half_up(x):
    """Round to the nearest integer, halves away from zero for x >= 0."""
    return int(math.floor(x + 0.5))


def top_count(a, n):
    """Number of records in the top ``a`` fraction of ``n``: ceil(a * n), at least 1.

    ``a * n`` is rounded to 9 decimals first so that e.g. 0.7 * 10 gives 7, not 8.
    """
    return max(1, int(math.ceil(round(a * n, 9))))


def largest_remainder(total, weights):
    """Apportion the integer ``total`` proportionally to ``weights``.

    Remainders are ranked descending; ties go to the lower index.
    """
    weights = np.asarray(weights, dtype=float)
    if total < 0:
        raise ValueError("total must be non-negative")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("weights must be non-negative with a positive sum")
    quotas = total * weights / weights.sum()
    counts = np.floor(quotas).astype(int)
    short = total - int(counts.sum())
    if short > 0:
        remainders = quotas - counts
        order = sorted(range(len(weights)), key=lambda i: (-remainders[i], i))
        for i in order[:short]:
            counts[i] += 1
    return counts


def derive_seed(master_seed, tag):
    """Stable 63-bit seed from (master seed, tag); independent of hash randomization."""
    digest = hashlib.blake2b(f"{int(master_seed)}:{tag}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def format_float(x):
    """17 significant digits: round-trips every float64 exactly."""
    return format(float(x), ".17g")
