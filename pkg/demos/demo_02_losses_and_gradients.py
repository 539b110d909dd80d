"""
The four training losses and their gradients
============================================

Every model is a dense ReLU net with a joint 30-way head. Training uses one
of four batch-mean objectives; backprop is written by hand, so we check it
against central differences.
"""

import numpy as np

from hetfl.nn import (
    L1Distill,
    LocalCombined,
    LwoF,
    ModelArch,
    TaskCE,
    backward,
    forward_logits,
    init_params,
    softmax_temperature,
)

rng = np.random.default_rng(0)
params = init_params(ModelArch(input_dim=4, hidden_layers=2, hidden_width=6, output_dim=5), seed=1)
x = rng.normal(size=(8, 4))
labels = rng.integers(0, 5, size=8)
target = rng.normal(size=(8, 5))
z = forward_logits(params, x)

# temperature softens the distribution
print("softmax rho=1:", np.round(softmax_temperature(z[:1], 1.0), 3))
print("softmax rho=4:", np.round(softmax_temperature(z[:1], 4.0), 3))

objectives = {
    "L1 to ensemble logits": L1Distill(target),
    "task cross-entropy": TaskCE(labels),
    "LwoF to a snapshot": LwoF(target, rho=2.0),
    "CE + beta * LwoF": LocalCombined(labels, target, rho=2.0, beta=1.0),
}


def numeric_grad(obj, k, idx, h=1e-4):
    w = params.layers[k][0]
    old = w[idx]
    w[idx] = old + h
    up = obj.value(forward_logits(params, x))
    w[idx] = old - h
    down = obj.value(forward_logits(params, x))
    w[idx] = old
    return (up - down) / (2 * h)


for name, obj in objectives.items():
    grads = backward(params, x, obj)
    idx = (1, 2)
    print(f"{name:24s} loss {obj.value(z):8.4f}  "
          f"dW0{idx}: analytic {grads.layers[0][0][idx]: .6f} numeric {numeric_grad(obj, 0, idx): .6f}")
