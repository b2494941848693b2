"""Certify a one-pixel toy where the answer is known in closed form.

The policy is Q = (1 - x, x) on a frame that always shows x = 0.7, and
action 0 crashes. An attacker needs to push x down to 0.5 to flip the
action, so the largest safe grid budget is just below 0.2, i.e. 50/255.

    python3 demos/line_toy.py
"""

from psrlcert.evaluation import AttackConfig, attacked_rollout
from psrlcert.tasc import certify
from psrlcert.toy import LineWorld, ToyState, line_policy

world = LineWorld(obs=0.7, unsafe_action=0)
policy = line_policy()

cert = certify(policy, ToyState(), 3, model=world)
print(cert.to_report(include_timing=True))

for eps in (cert.eps_safety, 0.21, 0.25):
    run = attacked_rollout(policy, None, 0, AttackConfig(eps), steps=cert.horizon - 1, s0=ToyState(), model=world)
    print(f"PGD at eps={eps:.4f}: actions {run.actions}, crashed={run.unsafe_reached}")
