"""
The same federation over TCP
============================

The server and participants exchange newline-delimited JSON messages over
localhost sockets. A tap records every line sent so we can look at exactly
what crosses the wire.
"""

import json

from fedfcm.data import load_bundled_wdbc, partition
from fedfcm.federation import FederationConfig, run_simulation
from fedfcm.pso import PsoConfig
from fedfcm.transport import run_tcp

config = FederationConfig(max_rounds=3, pso=PsoConfig(swarm_size=10, max_iterations=20), seed=2)
parts = partition(load_bundled_wdbc(), 3, seed=2)

wire = []
log = run_tcp(config, parts, tap=wire.append)
print(len(wire), "messages")

for raw in wire[:4]:
    msg = json.loads(raw)
    print(msg["type"], sorted(msg))

# a message never carries more than ids, rounds, names, matrices and accuracies
print(sorted({k for raw in wire for k in json.loads(raw)}))

# transport does not change the result
print(log.to_json() == run_simulation(config, parts).to_json())
