"""
Federated training on WDBC
==========================

Five participants each hold a shard of the 569 biopsies. Each one trains a
map on its own shard and reports the map with its test accuracy. The server
averages the maps weighted by accuracy and sends the result back; every
participant blends it half and half with its own map and reports again.
Twenty such rounds make up one run. Only matrices and accuracies move.
"""

import numpy as np

from fedfcm.data import load_bundled_wdbc, partition
from fedfcm.federation import FederationConfig, run_simulation

samples = load_bundled_wdbc()
parts = partition(samples, n_participants=5, train_fraction=0.8, seed=0)
for p in parts:
    print(p.participant_id, len(p.train), "train", len(p.test), "test")

log = run_simulation(FederationConfig(seed=0), parts)

print("participant   pre    post")
for pid, pre, post in log.pairs():
    print("%11d  %.4f  %.4f" % (pid + 1, pre, post))
print("mean         %.4f  %.4f" % (log.mean_pre(), log.mean_post()))

# mean accuracy round by round
print([round(float(np.mean(list(r.accuracy.values()))), 4) for r in log.rounds])

# without retraining the participants drift toward one shared map,
# halving their pairwise distance every round
print("final federated matrix checksum:", log.rounds[-1].federated_checksum)
