"""Walk through the cosine noise schedule and the deterministic reverse step.

A DDIM step that is handed the true noise lands exactly on the forward
sample one step earlier, so an oracle denoiser recovers x0 from pure noise.

    python3 demos/02_noise_schedule.py
"""

import numpy as np

from covdiff import diffusion as df
from covdiff.numkernel import Rng

s = df.cosine_schedule(100)
for k in (0, 1, 10, 50, 90, 100):
    print(f"alpha_bar[{k:>3}] = {s.alpha_bar[k]:.6g}")

rng = Rng(0)
x0 = rng.uniform((16, 6), -1, 1)
eps = rng.normal((16, 6))

x = df.q_sample(x0, 100, eps, s)
for k in range(100, 0, -1):
    x = df.ddim_step(x, eps, k, s)  # the oracle knows the noise
print("oracle reverse chain, max |x - x0| =", float(np.abs(x - x0).max()))

# a denoiser that always answers zero divides the start by sqrt(alpha_bar[K])
x = df.q_sample(x0, 100, eps, s)
x = df.sample(lambda x_k, k, cond: np.zeros_like(x_k), None, x.shape, s, seed=0, x_K=x)
print("zero denoiser, max |x| =", float(np.abs(x).max()))
