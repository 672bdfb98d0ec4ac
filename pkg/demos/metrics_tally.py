"""
Scoring masks with a confusion tally
====================================

Tallies of true positives, false positives and misses add up across images,
so scores can be computed in any order or in parallel.
"""

import numpy as np

from decoupled_attention.metrics import ConfusionTally, accumulate, format_table, score

gt = np.array([[1, 1], [1, 0]], dtype=np.uint8)
pred = np.array([[1, 1], [0, 1]], dtype=np.uint8)

t = accumulate(pred, gt, ConfusionTally(3))
print("tp", t.tp, "fp", t.fp, "fn", t.fn)
print(format_table(score(t), ["background", "cat", "dog"]))

# %%
# Void ground truth (255) is ignored; a void prediction counts as a miss.
t2 = accumulate(np.full((2, 2), 255, np.uint8), np.array([[2, 255], [2, 0]], np.uint8), ConfusionTally(3))
print(format_table(score(t + t2, include_background=True), ["background", "cat", "dog"], "two images"))
