"""Why feature selection must sit inside the CV loop.

On pure noise (no feature relates to the label) an honest LOOCV hovers
near chance. Refitting the ANOVA filter on all subjects before splitting,
the classic double-dipping mistake, inflates accuracy well above it. The
trace audit names the stage that saw held-out subjects.

Run: python3 demos/02_leakage_control.py   (about 20 s)
"""

from neuropipe.cv_engine import run_experiment
from neuropipe.ingest import spec_from_dict
from neuropipe.synth import SynthSpec, generate_tabular

cohort = generate_tabular(SynthSpec(n_pos=60, n_neg=60, p=1000, s=0, delta=0.0, seed=3)).cohort
spec = spec_from_dict({
    "name": "noise",
    "task": "EvsH",
    "selection": {"method": "anova", "k": [50]},
    "classifier": {"family": "knn", "grid": {"k": [15]}},
    "cv": {"scheme": "loocv", "seed": 3},
})

honest = run_experiment(spec, cohort)
print(f"honest LOOCV accuracy: {honest.report.accuracy:.3f}  (violations: {len(honest.report.violations)})")

leaky = run_experiment(spec, cohort, debug_leak="select")
v = leaky.report.violations
print(f"double-dipping accuracy: {leaky.report.accuracy:.3f}  (violations: {len(v)})")
print(f"first violation: stage={v[0].stage}, fold={v[0].fold}, leaked ids={', '.join(v[0].leaked_ids)}")
