"""Render a scattering sphere and look at its parameter derivatives.

Run from the repository root:

    python3 demos/render_and_derivatives.py

Prints the image total with its standard error, then the image-sum
derivative for each medium parameter from the score estimator next to a
central finite difference taken with common random numbers.
"""

import math
from pathlib import Path

from invtransport.grad import PARAMS, finite_difference_gradient, render_with_gradients
from invtransport.scene import load_scene
from invtransport.transport import render, render_single_scatter

scene = load_scene(Path(__file__).with_name("sphere.json"))
print("medium:", scene.medium)

full = render(scene, 256, seed=0)
single = render_single_scatter(scene, 256, seed=0)
total, se = full.total()
print(f"image total {total:.4f} +/- {se:.4f}")
print(f"single scattering carries {single.total()[0] / total:.1%} of it")

grads = render_with_gradients(scene, 1024, seed=1)
steps = {"sigma_t": 0.02 * scene.medium.sigma_t, "albedo": 1e-3, "g": 1e-2}
for name in PARAMS:
    a, sa = grads.derivative(name).total()
    b, sb = finite_difference_gradient(scene, name, steps[name], 1024, seed=2).total()
    print(f"d/d{name:8s} score {a:9.4f} +/- {sa:.4f}   fd {b:9.4f} +/- {sb:.4f}"
          f"   z = {(a - b) / math.hypot(sa, sb):+.2f}")
