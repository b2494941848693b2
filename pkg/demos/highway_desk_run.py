"""Train one robust variant on the highway preset, certify it, then try to break it.

Takes a few minutes on one CPU:

    python3 demos/highway_desk_run.py [variant] [seed]

The nominal pair is trained once; the chosen variant then fine-tunes it.
Certificates are computed for a handful of start states, and each is
attacked with PGD at exactly the certified budget. No attacked rollout
should crash.
"""

import statistics
import sys

import numpy as np

from psrlcert import env
from psrlcert.evaluation import AttackConfig, attacked_rollout, evaluate
from psrlcert.tasc import certify
from psrlcert.train import TrainConfig, train_pipeline

variant = sys.argv[1] if len(sys.argv) > 1 else "psrl_hybrid"
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
preset = env.get_preset("highway")

policy, log = train_pipeline(preset, TrainConfig(seed=seed, variant=variant))
print(f"trained {variant}; final greedy reward {log.rows[-1]['eval_reward']:.2f}")

report = evaluate(policy, preset, range(1000, 1010))
print(f"nominal reward {report.mean_reward:.2f} +/- {report.sem_reward:.2f}, "
      f"false action rate {report.false_action_rate:.3f}, feature MSE {report.avg_err:.4f}")

labels = []
for start in range(700, 706):
    cert = certify(policy, env.reset(preset, start), 5)
    labels.append(cert.eps_index)
    if cert.nominal_unsafe:
        print(f"start {start}: the unperturbed policy crashes, nothing to certify")
        continue
    crashes = sum(attacked_rollout(policy, preset, start, AttackConfig(cert.eps_safety, seed=s),
                                   steps=cert.horizon - 1).unsafe_reached for s in range(5))
    print(f"start {start}: eps_safety {cert.label} ({cert.nodes_explored} nodes), "
          f"{crashes}/5 attacked rollouts crashed")
print(f"median certified budget {statistics.median(labels)}/255 (max {np.max(labels)}/255)")
