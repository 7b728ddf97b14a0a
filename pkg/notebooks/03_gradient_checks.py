# %% [markdown]
# # Checking hand-written gradients
#
# Every backward rule in the package is compared with central finite
# differences.  Here is one check done by hand, then the full suite.

# %%
import numpy as np

from mgfi_tvr import tensor as T
from mgfi_tvr.gradcheck import gradcheck_all, numeric_grad, rel_error

rng = np.random.default_rng(0)
x = rng.normal(size=(3, 5))
ln = T.LayerNormParams(rng.normal(size=5), rng.normal(size=5))
upstream = rng.normal(size=(3, 5))


def loss():
    return float((upstream * T.layer_norm(x, ln)).sum())


dx, dgain, dbias = T.layer_norm_backward(upstream, x, ln)
for name, analytic, arr in (("x", dx, x), ("gain", dgain, ln.gain), ("bias", dbias, ln.bias)):
    print(f"layer norm d{name}: rel err {rel_error(analytic, numeric_grad(loss, arr)):.2e}")

# %% [markdown]
# The suite covers the primitives, both pooling paths (including the
# frame-max routing), the audio head and the contrastive loss at C = 2, 4, 8.

# %%
report = gradcheck_all(seed=0)
print("\n".join(report.lines()))
print("all passed:", report.passed, f"({report.seconds:.1f}s)")
