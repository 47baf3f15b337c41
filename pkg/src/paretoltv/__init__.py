"""Multi-horizon lifetime value modeling on synthetic funnel data.

Modules:
  autodiff   reverse-mode gradient engine and parameter store
  ziln       zero-inflated lognormal loss and predictions
  datagen    funnel simulation, labels, splits and JSONL IO
  graphpre   meta-path graph construction and masked pretraining
  model      embedding/interaction/normalization backbone with ZILN heads
  pareto     multi-task gradient combination and training loop
  metrics    NMAE, AUC, normalized Gini, stability diff
  experiments label-drop and seed-correlation studies
  config     TOML run configuration
  cli        command line entry points
"""

__version__ = "0.1.0"
