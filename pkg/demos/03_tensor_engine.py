"""Tour the reverse-mode tensor engine that powers the network.

Builds small graphs, checks gradients against central differences, and runs
one scaled dot-product attention block end to end.
"""

import numpy as np

from laneshape import (
    ParameterStore,
    Tensor,
    backward,
    finite_difference_check,
    layer_norm,
    matmul,
    row_softmax,
    scaled_dot_product_attention,
)
from laneshape import autograd as ag

# Gradients of a quadratic: d/dx sum(x*x) = 2x.
store = ParameterStore()
x = store.add("x", np.array([1.0, -2.0, 3.0]))
backward(ag.tensor_sum(x * x))
print("x:", x.data, " grad:", x.grad)

# The checker compares every coordinate against central differences.
err = finite_difference_check(lambda: ag.tensor_sum(x * x * x), store, step=1e-6)
print("cubic finite-difference max relative error:", err)

# Softmax rows are probability distributions, shift-invariant.
scores = Tensor(np.array([[1.0, 2.0, 3.0], [10.0, 10.0, 10.0]]))
print("\nsoftmax rows:\n", row_softmax(scores).data)

# One attention block: a query close to the second key picks its value.
q = Tensor(np.array([[0.0, 4.0]]))
k = Tensor(np.array([[4.0, 0.0], [0.0, 4.0]]))
v = Tensor(np.array([[1.0, 1.0], [7.0, -7.0]]))
out, attn = scaled_dot_product_attention(q, k, v)
print("\nattention map:", attn.data, " output:", out.data)

# Layer normalization standardizes each row then applies gain/bias.
rows = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
normed = layer_norm(rows, Tensor(np.ones(4)), Tensor(np.zeros(4)))
print("\nlayer norm output:", normed.data, " (mean ~0, std ~1)")

# A composite graph through matmul + attention still checks out.
store2 = ParameterStore()
w = store2.add("w", np.random.default_rng(0).normal(size=(2, 2)))

def objective():
    out2, _ = scaled_dot_product_attention(matmul(q, w), k, v)
    return ag.tensor_sum(out2 * out2)

print("\ncomposite graph FD max relative error:",
      finite_difference_check(objective, store2))
