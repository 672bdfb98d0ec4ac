"""
Mean-field dense CRF on a toy image
===================================

A 3x3 grey patch whose centre pixel is wrongly labelled. Pairwise smoothing
pulls it back to agree with its neighbours.
"""

import numpy as np

from decoupled_attention.crf import CrfConfig, mean_field

unary = np.tile([0.8, 0.2], (3, 3, 1))
unary[1, 1] = [0.2, 0.8]
image = np.full((3, 3, 3), 120.0)

# %%
# Watch the centre pixel's distribution after every iteration.
print("start", unary[1, 1])
mean_field(unary, image, CrfConfig(n_iters=5), callback=lambda it, Q: print(it, Q[1, 1]))

# %%
# With both kernel weights at zero the CRF does nothing: the output is the
# normalized unary.
q = mean_field(unary, image, CrfConfig(w_bilateral=0.0, w_smooth=0.0))
print("unchanged:", np.allclose(q, unary))
