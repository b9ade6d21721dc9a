"""Subject-level decision fusion across repeated vowel recordings.

Two tools: the closed-form binomial majority-vote accuracy estimate for k
independent per-recording decisions, and the empirical plurality fuser used on
actual predictions. The closed form counts an even-k exact tie as a success
(the lower summation limit is ceil(k/2)); the empirical fuser instead breaks
ties by summed class scores. That difference is deliberate and tested.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

MAX_FUSED_RECORDINGS = 64


@dataclass(frozen=True)
class FusionEstimate:
    p: float
    k: int
    acc_subject: float


def subject_accuracy_estimate(p: float, k: int) -> float:
    """Probability that the majority of k independent decisions (each correct
    with probability p) is correct: sum_{i=ceil(k/2)}^{k} C(k,i) p^i (1-p)^(k-i).

    Exact binomial coefficients; valid for 1 <= k <= 64, p in [0, 1].
    """
    if not (0.0 <= p <= 1.0):
        raise DataError(f"p must lie in [0, 1], got {p}")
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool):
        raise DataError("k must be an integer")
    if not (1 <= k <= MAX_FUSED_RECORDINGS):
        raise DataError(f"k must lie in [1, {MAX_FUSED_RECORDINGS}], got {k}")
    q = 1.0 - p
    total = 0.0
    for i in range(math.ceil(k / 2), k + 1):
        total += math.comb(k, i) * p**i * q ** (k - i)
    return min(1.0, total)


def estimate(p: float, k: int) -> FusionEstimate:
    return FusionEstimate(p=p, k=int(k), acc_subject=subject_accuracy_estimate(p, k))


def majority_vote_fuse(labels, score_vectors=None) -> int:
    """Fuse one subject's per-recording predictions into a single label.

    Plurality wins; ties break by the highest summed per-class score among the
    tied labels, then by the lowest class index. Labels are integer class
    indices; score_vectors is an optional (n, K) array aligned with them.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] == 0:
        raise DataError("cannot fuse zero recordings")
    counts = np.bincount(labels)
    top = counts.max()
    cand = np.flatnonzero(counts == top)
    if cand.shape[0] == 1 or score_vectors is None:
        return int(cand[0])
    scores = np.asarray(score_vectors, dtype=np.float64)
    summed = scores.sum(axis=0)
    return int(cand[int(np.argmax(summed[cand]))])
