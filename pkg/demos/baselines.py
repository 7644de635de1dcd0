"""
Comparison with simpler pipelines on the same labeled subsets
===============================================================

``source_only`` classifies by nearest labeled class mean, ``tca_like``
aligns only the domain means, ``jda_like`` adds class-wise alignment with
pseudo-labels and ``propagation_only`` stops after the initial graph
propagation.
"""

from slsada import ShiftSpec, SolverConfig
from slsada.harness import BASELINES, ExperimentSpec, run_protocol

spec = ExperimentSpec(ShiftSpec(rotation_deg=15, offset=1.0), repeats=10,
                      solver=SolverConfig(k=2, lam=1.0, gamma=0.1), baselines=BASELINES)
report = run_protocol(spec)

print(f"{'method':>18}  mean_s  mean_t  std_t")
for method, row in report.summary().items():
    print(f"{method:>18}  {row['mean_s']:.3f}  {row['mean_t']:.3f}  {row['std_t']:.3f}")

# the full report (per repeat, with objective traces) is plain JSON
report.to_json("baselines_report.json")
