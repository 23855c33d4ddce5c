"""A first look at the tensor engine: forward ops, the tape, backward.

Everything below runs on the small reverse-mode engine in lcanet.tensor.
Tensors wrap numpy arrays; any op whose inputs require gradients records
a node on a tape, and backward() walks that tape once, depositing
adjoints into the leaves.
"""

import numpy as np

from lcanet import tensor as T
from lcanet.tensor import Tensor, backward, no_grad

# A tiny computation: y = sum(relu(x @ w + b))
x = Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
w = Tensor(np.array([[2.0], [-1.0]]), requires_grad=True)
b = Tensor(np.array([0.25]), requires_grad=True)

y = T.tensor_sum(T.relu(T.add(T.matmul(x, w), b)))
print("forward value:", y.item())

backward(y)
print("dy/dx:\n", x.grad)
print("dy/dw:\n", w.grad)
print("dy/db:", b.grad)

# Check one entry of dy/dx against a finite difference by hand.
eps = 1e-6
with no_grad():
    x.data[0, 0] += eps
    plus = T.tensor_sum(T.relu(T.add(T.matmul(x, w), b))).item()
    x.data[0, 0] -= 2 * eps
    minus = T.tensor_sum(T.relu(T.add(T.matmul(x, w), b))).item()
    x.data[0, 0] += eps
numeric = (plus - minus) / (2 * eps)
print(f"\nanalytic dy/dx[0,0] = {x.grad[0, 0]:.6f}, finite difference = {numeric:.6f}")

# Gradients accumulate until cleared — two backward passes double them.
x.grad[...] = 0
backward(T.tensor_sum(T.relu(T.add(T.matmul(x, w), b))))
backward(T.tensor_sum(T.relu(T.add(T.matmul(x, w), b))))
print("\nafter two backward passes dy/dx[0,0] doubles:", x.grad[0, 0])

# Inside no_grad() nothing is taped, so inference is allocation-cheap.
with no_grad():
    silent = T.relu(T.add(T.matmul(x, w), b))
print("taped under no_grad?", silent.node is not None)
