import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from voicetriage.cnn import CnnConfig
from voicetriage.cohort import CohortSpec, generate_cohort
from voicetriage.classifiers import KernelSpec
from voicetriage.dataset import Partition
from voicetriage.pipeline import TrainConfig, extract_set, train_pipeline


def split_cohort_sets(spec, pattern=("train", "train", "val", "test")):
    """Stream a synthetic cohort into (train, val, test) ExtractedSets.

    Speakers are dealt per diagnosis cyclically over `pattern`, so every class
    reaches every partition; extraction streams one recording at a time.
    """
    role_of = {}
    counters = {}
    buckets = {"train": [], "val": [], "test": []}

    def route(rec):
        spk = rec.speaker_id
        if spk not in role_of:
            c = counters.get(rec.diagnosis, 0)
            counters[rec.diagnosis] = c + 1
            role_of[spk] = pattern[c % len(pattern)]
        buckets[role_of[spk]].append(rec)

    for rec in generate_cohort(spec):
        route(rec)
    return (
        extract_set(buckets["train"]),
        extract_set(buckets["val"]),
        extract_set(buckets["test"]),
    )


def tiny_train_config(seed=3):
    """Small but complete config: reduced CNN, compact grids, 2-fold CV."""
    return TrainConfig(
        seed=seed,
        cnn=CnnConfig(filters=(2, 4, 4), epochs_max=2, patience=None, batch_size=16, seed=seed),
        folds=2,
        trees=10,
        compact_grids=True,
    )


@pytest.fixture(scope="session")
def small_cohort_sets():
    # deliberately separable: the spec-level comparison runs on the default
    # (harder) cohort in the acceptance suite
    spec = CohortSpec(n_speakers=36, seed=11, duration=0.7, contrast=1.5, speaker_spread=0.10)
    return split_cohort_sets(spec, pattern=("train", "train", "val", "test"))


@pytest.fixture(scope="session")
def small_bundle(small_cohort_sets):
    train, val, _ = small_cohort_sets
    return train_pipeline(train, val, tiny_train_config())
