"""Independent reference implementations used as test oracles.

They deliberately share nothing with the engines beyond ``utility``: no
bitmasks, no cache, no value table.
"""

import itertools
import math

from shapnoise.core import Dataset
from shapnoise.metrics import utility


def _v(train, ids, test, kind, config):
    sub = train.subset(ids) if ids else Dataset.empty(train.dim)
    return utility(sub, test, kind, config)


def direct_summation(train, test, kind, config):
    """Subset-form Shapley sum, one fresh fit per term."""
    ids = train.ids.tolist()
    n = len(ids)
    out = {}
    for i in ids:
        others = [j for j in ids if j != i]
        total = 0.0
        for size in range(n):
            for s in itertools.combinations(others, size):
                gain = _v(train, list(s) + [i], test, kind, config) - _v(train, list(s), test, kind, config)
                total += gain / math.comb(n - 1, size)
        out[i] = total / n
    return out


def permutation_enumeration(train, test, kind, config):
    """Average marginal over all N! join orders."""
    ids = train.ids.tolist()
    sums = dict.fromkeys(ids, 0.0)
    count = 0
    for order in itertools.permutations(ids):
        for k, i in enumerate(order):
            sums[i] += _v(train, list(order[: k + 1]), test, kind, config) - _v(
                train, list(order[:k]), test, kind, config
            )
        count += 1
    return {i: s / count for i, s in sums.items()}
