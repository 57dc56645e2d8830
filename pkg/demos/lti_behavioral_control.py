"""Data-driven control of a small linear system, step by step.

1. Record one persistently exciting input/output trajectory.
2. Show that the Hankel matrix of that record reproduces a fresh trajectory.
3. Close the loop with tracking DeePC and watch the output settle.
4. Swap in an economic controller with an identity lift and a quadratic head
   centred on the set-point, and compare its inputs with the tracking ones.
5. Repeat with the SVD-reduced decision vector.

Run with ``python3 demos/lti_behavioral_control.py``.
"""

from dataclasses import replace

import numpy as np

from econdeepc import controller as C
from econdeepc.learn import CostHead, LiftingModel, Scaling, TransformNet
from econdeepc.plant import InputBounds, LtiPlant, lti_rollout, random_lti
from econdeepc.qpsolve import QPSolver
from econdeepc.trajkit import Trajectory, build_hankel, is_persistently_exciting, pseudo_inverse

T_INI, N_P = 3, 5
L = T_INI + N_P

rng = np.random.default_rng(1)
sys = random_lti(rng, n_x=3, n_u=2, n_y=2)
plant = LtiPlant(sys, InputBounds((-1.0, -1.0), (1.0, 1.0)))

# 1. one open-loop experiment with uniform random inputs
u = rng.uniform(-1, 1, (200, 2))
y = np.array([plant.step(v) for v in u])
traj = Trajectory(u, y, np.zeros(len(u)), 1.0)
ok, rank = is_persistently_exciting(u, L + sys.n_x)
print(f"input is persistently exciting of order {L + sys.n_x}: {ok} (rank {rank})")

# 2. a fresh trajectory from a random initial state lies in the Hankel column space
H = np.vstack([build_hankel(u, L).data, build_hankel(y, L).data])
u_new = rng.uniform(-1, 1, (L, 2))
y_new, _ = lti_rollout(sys, rng.normal(size=3), u_new)
w = np.concatenate([u_new.ravel(), y_new.ravel()])
g = pseudo_inverse(H) @ w
print(f"fresh trajectory reproduced with relative residual {np.linalg.norm(H @ g - w) / np.linalg.norm(w):.1e}")

# 3. tracking DeePC towards a reachable steady state
u_ref = np.array([0.3, -0.2])
y_ref = (sys.C @ np.linalg.solve(np.eye(3) - sys.A, sys.B) + sys.D) @ u_ref
blocks = C.tracking_blocks(traj, T_INI, N_P)
tracker = C.TrackingController(blocks, y_ref, u_ref, np.eye(2), 0.1 * np.eye(2), 0.0, plant.bounds, tol=1e-9)
res = C.closed_loop(plant, tracker, 40, 0, warmup_input=[0.5, 0.5])
print(f"tracking: y_ref = {np.round(y_ref, 4)}, final output error {np.abs(res.outputs[-1] - y_ref).max():.1e}")
for k in (0, 1, 2, 5, 10, 39):
    print(f"  step {k:2d}  u = {np.round(res.inputs[k], 4)}  y = {np.round(res.outputs[k], 4)}")

# 4. economic DeePC with z = y and stage cost ||z - y_ref||^2
head = CostHead(np.zeros(2), -2 * y_ref, float(y_ref @ y_ref), "cost")
model = LiftingModel(TransformNet.linear(np.eye(2)), head, np.eye(2), Scaling.identity(2, 2), (0, 1))
cfg = C.ControllerConfig(T_ini=T_INI, N_p=N_P, bounds=plant.bounds, R=0.1 * np.eye(2), lambda_g=0.0,
                         mode="cost", tol=1e-10)
econ_blocks = C.econ_blocks(traj, model, T_INI, N_P)
econ = C.closed_loop(plant, C.EconomicController(econ_blocks, model, cfg), 40, 0, warmup_input=[0.5, 0.5])

# the matching tracking problem penalizes the input *rate*, so its input
# reference is the previous input and its weight D' R D
D = C._difference_operator(2, N_P)
rate_qp = C.TrackingQP(blocks, np.eye(2), D.T @ np.kron(np.eye(N_P), cfg.R) @ D, 0.0, plant.bounds)
solver = QPSolver(1e-10, 1e-10, 1e-10)


class RateTracker:
    T_ini = T_INI

    def act(self, window):
        sol = solver.solve(rate_qp(window, y_ref, np.tile(window.u_prev, N_P)))
        seq, first = C.extract_input(sol, blocks.U_f, 2, plant.bounds)
        return C.Decision(first, sol.status, sol.iterations, objective=sol.objective, u_seq=seq)


rate = C.closed_loop(plant, RateTracker(), 40, 0, warmup_input=[0.5, 0.5])
print(f"economic vs rate-tracking inputs: max difference {np.abs(econ.inputs - rate.inputs).max():.1e}")

# 5. the same controller on the rank-n_r factor of the Hankel matrix
reduced = C.EconomicController(econ_blocks, model, replace(cfg, order="reduced"))
red = C.closed_loop(plant, reduced, 40, 0, warmup_input=[0.5, 0.5])
print(f"reduced controller: {econ_blocks.n_g} -> {reduced.n_g} decision variables, "
      f"max input difference {np.abs(red.inputs - econ.inputs).max():.1e}")
