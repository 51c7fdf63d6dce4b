#!/usr/bin/env python3
# A short walk through the tensor core: build a tiny graph, backprop, and
# check the result against central differences.
import numpy as np

from recurad.tensorcore import (
    ConvNd, Tensor, conv2d, conv_transpose2d, gradcheck, l1_loss, leaky_relu, sigmoid, spatial_gradient, sum_,
)

rng = np.random.default_rng(0)

# scalars first: y = sigmoid(a*b + a), so a is used twice and its gradients add up
a = Tensor(np.array(0.7), requires_grad=True)
b = Tensor(np.array(-1.3), requires_grad=True)
y = sigmoid(a * b + a)
y.backward()
s = y.item()
print("y =", round(s, 6))
print("dy/da =", float(a.grad), " closed form:", s * (1 - s) * (b.item() + 1))
print("dy/db =", float(b.grad), " closed form:", s * (1 - s) * a.item())

# a 3x3 conv with leaky ReLU and a gradient-map L1 loss, the same pieces the
# autoencoder uses
conv = ConvNd(3, 3, 3, rng, padding=1)
x = Tensor(rng.uniform(0, 1, (2, 3, 8, 8)))
target = Tensor(rng.uniform(0, 1, (2, 3, 8, 8)))


def loss():
    out = leaky_relu(conv(x), 0.01)
    return l1_loss(out, target) + l1_loss(spatial_gradient(out), spatial_gradient(target))


err = gradcheck(loss, conv.parameters(), eps=1e-3)
print(f"conv + gradient-map loss, relative error vs finite differences: {err:.2e}")

# stride-2 transposed conv doubles the resolution
up = conv_transpose2d(Tensor(rng.standard_normal((1, 3, 4, 4))), Tensor(rng.standard_normal((3, 3, 2, 2))),
                      stride=2)
print("transposed conv:", (1, 3, 4, 4), "->", up.shape)

# the adjoint identity <Ax, y> = <x, A^T y> is what ties conv and its transpose together
w = rng.standard_normal((4, 3, 2, 2))
xx = rng.standard_normal((1, 3, 6, 6))
Ax = conv2d(Tensor(xx), Tensor(w), stride=2).data
yy = rng.standard_normal(Ax.shape)
lhs = float(np.sum(Ax * yy))
rhs = float(np.sum(xx * conv_transpose2d(Tensor(yy), Tensor(w), stride=2).data))
print(f"<Ax,y> = {lhs:.10f}   <x,A^T y> = {rhs:.10f}")
print("sum of a 2x2 map:", sum_(Tensor(np.ones((2, 2)))).item())
