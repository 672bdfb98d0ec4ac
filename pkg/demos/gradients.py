"""
Checking gradients of the attention loss
========================================

The tensor module carries its own reverse-mode differentiation. Here we build
the full two-stream loss on a tiny random feature map and compare the
analytic gradient with central differences.
"""

import numpy as np

from decoupled_attention.model import ModelParams, loss
from decoupled_attention.rng import generator
from decoupled_attention.tensor import Tensor, grad_check, softplus_eps, spatial_normalize

# %%
# A 4x4 map with 3 feature channels and 2 classes. Dropout is off so the
# loss is a deterministic function of the weights.
rng = generator(0)
x = rng.normal(size=(4, 4, 3))
y = np.array([1.0, 0.0])
params = ModelParams(rng.normal(size=(3, 2)), rng.normal(size=2), rng.normal(size=(3, 2)), rng.normal(size=2), dropout_rate=0.0)

value = loss(x, y, params)
value.backward()
print("loss", value.item())
print("dL/dw\n", params.w.grad)

# %%
# ``grad_check`` perturbs every parameter entry by +/- h and reports the
# worst relative disagreement.
params.zero_grad()
print("max relative error", grad_check(lambda: loss(x, y, params), params.tensors(), 1e-5))

# %%
# Building blocks compose the same way. Attention maps are softplus
# responses rescaled to sum to one over space.
z = Tensor(rng.normal(size=(4, 4, 2)), requires_grad=True)
A = spatial_normalize(softplus_eps(z, 0.1))
print("per-channel mass", A.data.sum(axis=(0, 1)))
