"""Tour of the differentiable-numerics substrate.

Builds a tiny attention block, backpropagates through it, and verifies the
gradients against central finite differences - the same oracle the test
suite uses for every primitive.
"""

import numpy as np

from ovdet.nn import ParamStore, Tensor, gradcheck, multi_head_attention, softmax
from ovdet.nn.layers import init_attention

rng = np.random.default_rng(0)

# --- tensors record their history -----------------------------------------
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
loss = (softmax(x @ w, axis=-1) ** 2).sum()
loss.backward()
print("loss:", loss.item())
print("dloss/dw:\n", np.round(w.grad, 4))

# --- a whole attention layer is just composed primitives ------------------
store = ParamStore()
init_attention(store, rng, "attn", 8)
tokens = rng.normal(size=(5, 8))
out = multi_head_attention(Tensor(tokens), store, n_heads=2)
print("attention output shape:", out.shape)

# --- and the finite-difference oracle agrees with the tape ----------------
err = gradcheck(lambda t: (multi_head_attention(t, store, 2) ** 2).sum(), tokens)
print(f"attention gradcheck relative error: {err:.2e}  (tolerance 1e-4)")
