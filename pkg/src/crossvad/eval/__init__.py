"""AUC evaluation, experiment tables and plots."""

from .experiments import (REFERENCE_ABLATION, REFERENCE_FLOW_METHODS, REFERENCE_VGG_LAYERS, BundleCache,
                          ExperimentConfig, ExperimentReport, ReportRow, ScoreSeries, default_ablation_configs,
                          run_ablation, run_flow_comparison, run_vgg_layer_sweep, score_manifest)
from .metrics import MetricError, roc_auc, roc_curve
from .render import heatmap_overlay, plot_roc, render_outputs
