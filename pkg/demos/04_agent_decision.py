"""Accounting model for an agent that chooses when to retrieve.

With p helpful and q_hurt hurtful samples, an agent that skips retrieval on a
fraction a of helpful cases and retrieves on a fraction b of hurtful ones
expects base - a*p + (1-b)*q_hurt correct answers.  It beats always-retrieving
only when its error rates satisfy p/q_hurt < (1-b)/a.
"""

import numpy as np

from rir import AgentModel, agent_analysis, agent_sweep

model = AgentModel(n=1650, p=221, q_hurt=94, a=0.5792, b=0.2872,
                   base_rir_correct=774)
outcome = agent_analysis(model)
print(f"always-retrieve baseline: {100 * model.base_rir_correct / model.n:.2f}%")
print(f"deciding agent: {outcome.expected_accuracy:.2f}% "
      f"({outcome.expected_correct:.1f}/{model.n}) -> {outcome.dominance.value}")

ideal = agent_analysis(AgentModel(n=1650, p=221, q_hurt=94, a=0.0, b=0.0,
                                  base_rir_correct=774))
print(f"ideal agent (a=b=0): {ideal.expected_accuracy:.2f}%")

print("\nexpected accuracy over the (a, b) error grid:")
axis = [round(0.25 * i, 2) for i in range(5)]
grid = agent_sweep(n=1650, p=221, q_hurt=94, base_rir_correct=774,
                   a_values=axis, b_values=axis)
cells = np.array([g["expected_accuracy"] for g in grid]).reshape(len(axis), len(axis))
print("a\\b " + "".join(f"{b:>8.2f}" for b in axis))
for a, row in zip(axis, cells):
    print(f"{a:4.2f}" + "".join(f"{v:8.2f}" for v in row))
print("\n(the a=b=0 corner recovers every hurtful case; moving right or down "
      "pays for misclassification)")
