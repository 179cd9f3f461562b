"""Per-subject prediction sets with a coverage guarantee.

Each outer fold sets aside part of its training split for calibration.
A label enters a subject's prediction set when its conformal p-value
exceeds epsilon, so the true label is missed at most about epsilon of the
time. Uncertain subjects get both labels instead of a confident guess.

Run: python3 demos/04_conformal_sets.py
"""

from collections import Counter

from neuropipe.cv_engine import conformal_experiment
from neuropipe.ingest import spec_from_dict
from neuropipe.synth import SynthSpec, generate_tabular

cohort = generate_tabular(SynthSpec(n_pos=60, n_neg=60, p=50, s=5, delta=0.8, seed=5)).cohort
spec = spec_from_dict({"name": "conf", "task": "EvsH", "classifier": {"family": "lr"},
                       "cv": {"folds": 5, "seed": 5}})

for eps in (0.05, 0.2):
    rows = conformal_experiment(spec, cohort, epsilon=eps)
    covered = sum(r["true_status"] in r["prediction_set"] for r in rows) / len(rows)
    sizes = Counter(len(r["prediction_set"]) for r in rows)
    print(f"epsilon={eps}: coverage {covered:.3f}, set sizes {dict(sorted(sizes.items()))}")

print("\nfirst five subjects at epsilon=0.2:")
for r in rows[:5]:
    print(f"  {r['subject_id']} true={r['true_status']} p0={r['p0']:.2f} p1={r['p1']:.2f} "
          f"set={r['prediction_set']}")
