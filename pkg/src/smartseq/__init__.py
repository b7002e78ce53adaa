"""Multistage adaptive sparse-signal recovery with FPR and MDR control.

The library implements the SMART ranking-and-running-average procedure,
fixed-cutoff sequential thresholding and distilled sensing, together with
the posterior recursion, threshold calibration, metrics and simulation
harness needed to compare them.
"""

__version__ = "0.1.0"

from .model import (ConstantMean, DecisionRecord, GroundTruth, ListMean, LossSpec, MixtureModel, StageRecord,
                    UniformMean, derive_seed, sample_ground_truth, sample_stage_observations, stagewise_loss,
                    weighted_loss)
from .posterior import (LocationState, PosteriorHyper, batch_posterior, init_state, oracle_hyper, t_or_from_lr,
                        update_state)
from .thresholds import (CalibrationResult, ErrorBudget, InfeasibleBudgetError, MCConfig, ThresholdPair,
                         approx_thresholds, calibrate_oracle_thresholds, kl_divergence_normal, limit_bounds,
                         unstringent_upper, wald_boundaries)
from .procedures import (ModelStream, RecordedStream, TruncatedRunError, run_distilled_sensing,
                         run_simple_thresholding, run_smart)
from .metrics import MetricsReport, RunMetrics, ensemble_metrics, per_run_metrics
from .ingest import (EmpiricalNullFit, PilotDataset, build_semisynthetic_model, compute_z_scores,
                     fit_empirical_null, load_delimited_table, load_grayscale_image)
from .simulate import SweepResult, SweepSpec, run_ds_matched_comparison, run_sweep
