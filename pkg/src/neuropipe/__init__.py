"""Nested cross-validated classification of subjects from neuroimaging features.

Modules
-------
cohort, ingest
    Subjects, feature blocks, connectivity matrices, tasks; file formats.
graph_features, flag_topology
    Feature extraction from connectivity matrices.
dimred, selection, classify
    Pipeline stages, all fitted on training rows only.
cv_engine
    Fold plans, nested grid search, decision logs and the leakage trace.
pcq, conformal, report
    Per-subject classification quality, conformal p-values, output tables.
synth
    Synthetic cohorts with planted signal.
"""

__version__ = "0.1.0"
