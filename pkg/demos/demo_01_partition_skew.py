"""
How skewed are the client shards?
=================================

Local training data is split across 20 clients with a per-class Dirichlet
draw. Small ``alpha`` hands most of a class to a few clients.
"""

import numpy as np

from hetfl.data import PartitionSpec, generate_synthetic, max_class_share, partition_dirichlet

# synthetic local task: 10 classes, 100 examples each
_, train, _ = generate_synthetic(rng_seed=0)

for alpha in (0.1, 0.5, 1e6):
    shards = partition_dirichlet(train, PartitionSpec(alpha, client_count=20, rng_seed=0))
    sizes = [len(s) for s in shards]
    print(f"alpha={alpha:<8g} mean max-class share {max_class_share(shards):.3f}  "
          f"shard sizes {min(sizes)}..{max(sizes)}")

# a text "bubble plot": rows are clients, columns classes
shards = partition_dirichlet(train, PartitionSpec(0.1, 20, 0))
grid = np.stack([s.per_class_counts for s in shards])
marks = " .:oO@"
for k, row in enumerate(grid):
    cells = "".join(marks[min(5, int(np.ceil(c / 20)))] for c in row)
    print(f"client {k:2d} |{cells}| {row.sum():4d}")
