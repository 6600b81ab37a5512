"""
Fuzzy cognitive map dynamics
============================

A map is a square weight matrix; entry w[j, i] is the influence of
concept j on concept i. Each step squashes the weighted sum of incoming
activations. Depending on the weights the states settle, cycle, or keep
moving until the iteration budget runs out.
"""

import numpy as np

from fedfcm.fcm import Activation, ConceptRole, FcmModel, activate, run_dynamics, step

# the unipolar sigmoid squashes everything into (0, 1)
print(activate(np.array([-2.0, 0.0, 1.0]), "sigmoid", 1.0))

# three free concepts with mixed influences
names = (("rain", ConceptRole.INPUT), ("traffic", ConceptRole.OUTPUT), ("delay", ConceptRole.OUTPUT))
w = np.array([
    [0.0, 0.7, 0.2],
    [0.0, 0.0, 0.9],
    [0.0, -0.4, 0.0],
])
model = FcmModel(names, w)

# one step by hand; rain is held at 1 by clamping it
print(step(model, [1.0, 0.0, 0.0], clamped={0}))

# iterate until the change drops below tol
out = run_dynamics(model, [1.0, 0.0, 0.0], clamped={0}, tol=1e-5)
print(out.kind.value, out.iterations, out.final_state.round(4))

# two concepts that copy each other's sign under a steep tanh flip forever
swap = FcmModel(names[:2], np.array([[0.0, 1.0], [1.0, 0.0]]), Activation.TANH, 5.0)
cyc = run_dynamics(swap, [1.0, -1.0])
print(cyc.kind.value, "period", cyc.period)

# a zero matrix forgets its start: every concept goes to sigmoid(0) = 0.5
print(run_dynamics(FcmModel(names, np.zeros((3, 3))), [0.9, 0.1, 0.4]).final_state)
