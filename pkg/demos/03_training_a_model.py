"""
Training a small model
======================

The network glances ``S`` times. After each glance it proposes where to
touch next and, after the last one, names the block. Location choices are
learned by REINFORCE, the classifier by cross-entropy. A short run with two
glances already lifts accuracy above chance.
"""

from hamlab.envs import make_env
from hamlab.trainer import TrainConfig, train

config = TrainConfig(glances=2, total_steps=1500, eval_every=250, eval_batches=20)
env = make_env("dataset")


def show(row):
    if row["snapshot_accuracy"] is not None:
        print(f"step {row['step']:>5}  lr {row['lr']:.2e}  accuracy {row['snapshot_accuracy']:.3f}")


result = train(config, env, progress=show)
print(f"best {result.best_accuracy:.3f} at step {result.best_step}")

# %%
# The per-glance accuracies of the best snapshot show how much the second,
# chosen glance adds over the random first one.
best = max(result.snapshots, key=lambda s: s.accuracy)
print("per glance:", [round(float(a), 3) for a in best.per_glance])
