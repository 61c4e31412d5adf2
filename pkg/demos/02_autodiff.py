"""
The numpy autodiff engine
=========================

Gradients for training, including the second derivatives needed by the
gradient penalty, come from a small reverse-mode engine.  This walks through
a few derivatives by hand and then runs the finite-difference suite.
"""
import numpy as np

from smartpaste import autodiff as ad
from smartpaste.autodiff.gradcheck import run_cases

# %% scalar derivatives, first to third order
x = ad.Tensor(np.array(2.0), requires_grad=True)
y = ad.mul(ad.mul(x, x), x)
(d1,) = ad.grad(y, [x], create_graph=True)
(d2,) = ad.grad(d1, [x], create_graph=True)
(d3,) = ad.grad(d2, [x])
print("x^3 at 2:", y.item(), "derivatives", d1.item(), d2.item(), d3.item())  # 8, 12, 12, 6

# %% a convolution layer: gradient with respect to input and weights
rng = np.random.default_rng(0)
img = ad.Tensor(rng.normal(size=(1, 8, 8, 3)), requires_grad=True)
w = ad.Tensor(rng.normal(size=(3, 3, 3, 4)) * 0.2, requires_grad=True)
loss = ad.sum(ad.square(ad.leaky_relu(ad.conv2d(img, w), 0.2)))
g_img, g_w = ad.grad(loss, [img, w])
print("conv grads:", g_img.shape, g_w.shape)

# %% the penalty term needs the norm of an input gradient, differentiated again
(g,) = ad.grad(loss, [img], create_graph=True)
norm = ad.sqrt(ad.sum(ad.square(g)))
(g_w2,) = ad.grad(ad.square(ad.sub(norm, 1.0)), [w])
print("d/dw (|dL/dx| - 1)^2 has norm", np.linalg.norm(g_w2.value).round(4))

# %% every op against central differences
for r in run_cases(["conv2d", "transposed_conv2d", "lrn", "gradient_penalty"]):
    print(r.line())
