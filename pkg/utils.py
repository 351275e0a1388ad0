from __future__ import division
import math
import logging
from typing import Sequence

import numpy as np

# set LOGGER
LOGGER = logging.getLogger(__name__)


# meter class for storing results
class AverageMeter(object):
    """Computes and stores the average and current value"""
    def __init__(self, name="meter"):
        self.name = name
        self.reset()

    def reset(self):
        self.val = 0
        self.avg = 0
        self.sum = 0
        self.count = 0

    def update(self, val, n=1):
        self.val = val
        self.sum += val * n
        self.count += n
        self.avg = self.sum / self.count


class AccuracyMeter(object):
    def __init__(self):
        self.reset()

    def reset(self):
        self.correct = 0
        self.wrong = 0
        self.accuracy = 0

    def update_batch(self, gold: np.ndarray, result: np.ndarray):
        hits = int(np.sum(np.asarray(gold) == np.asarray(result)))
        self.correct += hits
        self.wrong += int(np.size(gold)) - hits
        total = self.correct + self.wrong
        self.accuracy = self.correct / total if total else 0


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (ddof=1; 0.0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("mean_std of an empty sequence")
    if not np.all(np.isfinite(arr)):
        return float(np.mean(arr)), math.nan
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return float(np.mean(arr)), std


def relative_spread(values: Sequence[float]) -> float:
    """max |x / mean - 1| over the values."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(np.mean(arr))
    if mean == 0:
        return 0.0 if np.all(arr == 0) else math.inf
    return float(np.max(np.abs(arr / mean - 1.0)))
