"""Learning a lifting whose cost head is exactly quadratic.

An LTI plant is given the stage cost ``c = y' Q y + p' y + 1``. Because that
cost is already quadratic in ``y``, a lifting ``z = F(y)`` with a diagonal
quadratic head can represent it exactly, so the validation cost error should
fall to near zero. The script trains on 7000 window samples and prints the
loss history and a few predicted vs realized costs.

Run with ``python3 demos/learn_quadratic_cost.py`` (about 20 s).
"""

import numpy as np

from econdeepc import datagen, learn
from econdeepc.plant import InputBounds, LtiPlant, random_lti

rng = np.random.default_rng(0)
sys = random_lti(rng, n_x=3, n_u=2, n_y=2)
Q, p = np.diag([1.0, 0.5]), np.array([0.3, -0.2])


def cost(u, y):
    return np.einsum("...i,ij,...j->...", y, Q, y) + y @ p + 1.0


plant = LtiPlant(sys, InputBounds((-1.0, -1.0), (1.0, 1.0)), cost=cost)
# 200 samples for the Hankel matrix, 1000 windows of length 7 split 7:2:1
ds = datagen.split(datagen.generate(plant, 200, 7000, 7, seed=0), seed=0)
print(f"{len(ds.subset('train'))} train / {len(ds.subset('val'))} val / {len(ds.subset('test'))} test windows")

cfg = learn.TrainConfig(mode="cost", n_z=10, lr=3e-3, alphas=(1.0, 0.1, 0.1), lr_schedule="cosine",
                        batch_size=70, epochs=100)
model, history = learn.train(ds, cfg)

print("epoch   val L_e     val L_re    val L_linear")
for r in history.rows[::10] + history.rows[-1:]:
    print(f"{r['epoch']:5d}   {r['val_econ']:.3e}   {r['val_recon']:.3e}   {r['val_linear']:.3e}")

_, y_te, c_te = ds.stacked("test")
y_te, c_te = y_te.reshape(-1, 2), c_te.reshape(-1)
pred = model.predicted_cost(model.lift(y_te))
print(f"test RMS cost error {np.sqrt(np.mean((pred - c_te) ** 2)):.2e} (cost std {c_te.std():.2f})")
for k in range(5):
    print(f"  y = {np.round(y_te[k], 3)}  cost {c_te[k]:.4f}  predicted {pred[k]:.4f}")
