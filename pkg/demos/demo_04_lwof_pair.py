"""
Regularising local training towards the distilled model
=======================================================

Two paired runs differ only in ``beta``. With ``beta > 0`` each client's
local loss adds a softened cross-entropy to the model it had right after
distillation. The comparison uses the same delta table as ``hetfl compare``.
"""

from hetfl.cli import format_compare_row, compare_reports
from hetfl.federation import ExperimentConfig, run_experiment

base = ExperimentConfig(rounds=10, method="fedmd_global_lwof")
_, plain = run_experiment(base.replace(beta=0.0))
_, lwof = run_experiment(base.replace(beta=1.0))

print("B - A with A: beta=0, B: beta=1 (final-5 means)")
for row in compare_reports(plain, lwof, tail=5):
    print(format_compare_row(row))
