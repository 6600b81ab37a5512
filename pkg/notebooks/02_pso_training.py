"""
Learning a classifier map with a particle swarm
===============================================

The learnable weights are the links from every input concept to the two
output concepts, plus the 2x2 block among the outputs. A particle is a
flat vector of those weights; its fitness is one minus the mean Jaccard
similarity between predicted and true classes on the training split.
"""

import numpy as np

from fedfcm.data import load_bundled_wdbc, partition
from fedfcm.fcm import ClassifierTopology
from fedfcm.pso import PsoConfig, fitness, train

# a one-feature toy: class 1 exactly when x > 0.5
x = np.array([[0.1], [0.3], [0.7], [0.9]])
y = np.array([2, 2, 1, 1])
toy = ClassifierTopology(("x",))
print("learnable weights:", toy.dimension)

best, history = train(x, y, toy, PsoConfig(seed=0))
print("toy fitness by iteration:", history[:5], "...", history[-1])
print(toy.adjacency(best).round(3))

# without links among the outputs the toy cannot be fitted:
# c1 > c2 iff (w0 - w1) * x > 0, and x > 0 fixes the sign
strict = ClassifierTopology(("x",), output_feedback=False)
grid = np.linspace(-1, 1, 21)
print("best strict fitness:", min(fitness(np.array([a, b]), x, y, strict) for a in grid for b in grid))

# the same on one WDBC shard
shard = partition(load_bundled_wdbc(), 5, seed=0)[0]
xtr, ytr = shard.train_arrays
xte, yte = shard.test_arrays
topo = ClassifierTopology(tuple(f"f{i}" for i in range(30)))
pos, hist = train(xtr, ytr, topo, PsoConfig(swarm_size=30, max_iterations=100, seed=1))
model = topo.model(pos)
print("train fitness %.4f  test accuracy %.4f" % (hist[-1], topo.accuracy(model, xte, yte)))
