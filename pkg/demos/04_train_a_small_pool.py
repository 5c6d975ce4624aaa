"""Train a tiny network pool for a few minutes and compare it with the baseline."""
import logging

from lidarcodec import boe, codec, synthetic
from lidarcodec.models import training
from lidarcodec.models.baseline import BaselineModel
from lidarcodec.models.network import NeuralPool

logging.basicConfig(level=logging.INFO, format="%(message)s")

train = synthetic.corpus(4, seed=0)
held_out = synthetic.scan_frame(1000)

# Centers come from the occupancy histograms of levels 7..B-1.
centers = boe.fit_centers(training.descriptors(train), K=2, seed=0)
print("inertia per Lloyd iteration:", [round(v, 4) for v in centers.inertia])

pool = NeuralPool.create(8, centers.centers, seed=0)
pool, losses = training.train(pool, train, training.TrainConfig(steps=200, log_every=50))

base = codec.encode(held_out, BaselineModel()).bpp
res = codec.encode(held_out, pool)
print(f"held-out: neural {res.bpp:.2f} bpp, baseline {base:.2f} bpp")
print("networks per level:", [(r.level, r.network) for r in res.levels])
