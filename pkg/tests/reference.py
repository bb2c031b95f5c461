"""Independent reference implementations the tests compare against.

Everything here is written the slow, obvious way (pair enumeration,
pooled ranges, explicit finite differences) and stays free of the package's
own metric or gradient code paths.
"""

import numpy as np

from sste.data import Dataset, Provenance


def auc_bruteforce(predictions, labels) -> float:
    """O(n^2) pair counting: concordant pairs + half ties over all pairs."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels)
    pos = predictions[labels == 1]
    neg = predictions[labels == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def auc_pair_matrix(predictions, labels) -> float:
    """Same pair counting as auc_bruteforce, via a broadcast comparison.

    Kept separate so the large randomized sweeps stay fast while the loop
    version above remains the readable ground truth for small cases.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels)
    pos = predictions[labels == 1][:, None]
    neg = predictions[labels == 0][None, :]
    wins = (pos > neg).sum() + 0.5 * (pos == neg).sum()
    return float(wins) / (pos.size * neg.size)


def alpha_range(score_val, scores_aux) -> float:
    """The pooled max-minus-min form of the cross-set disagreement."""
    pooled = [score_val, *scores_aux]
    return max(pooled) - min(pooled)


def dcg_binary(ranked_flags) -> float:
    return sum(
        flag / np.log2(position + 1)
        for position, flag in enumerate(ranked_flags, start=1)
    )


def central_difference(f, x: float, h: float = 1e-5) -> float:
    return (f(x + h) - f(x - h)) / (2.0 * h)


def make_dataset(users, items, labels, n_users, n_items,
                 provenance=Provenance.BIASED_TRAIN) -> Dataset:
    return Dataset(
        users=np.asarray(users, dtype=np.int64),
        items=np.asarray(items, dtype=np.int64),
        labels=np.asarray(labels, dtype=np.int8),
        n_users=n_users,
        n_items=n_items,
        provenance=provenance,
    )


def separable_4x4() -> Dataset:
    """All 16 user-item pairs, positive exactly when item id < 2."""
    users, items, labels = [], [], []
    for u in range(4):
        for v in range(4):
            users.append(u)
            items.append(v)
            labels.append(1 if v < 2 else 0)
    return make_dataset(users, items, labels, 4, 4)
