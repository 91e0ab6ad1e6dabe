"""Heat maps, morphology-based noise suppression and frame scoring."""

from .features import (VGG16_LAYERS, FeatureError, FeatureExtractor, FeatureExtractorSpec,
                       canonical_layer, semantic_features)
from .morphology import MorphologyError, dilate, erode, morphological_closing, morphological_opening
from .scoring import (ClipScores, FusionConfig, HeatMap, NoiseSuppressionConfig, PipelineConfig,
                      ScoringError, anomaly_score, binarize, config_hash, fuse_heatmaps,
                      heatmap_from_features, heatmap_from_flow_pair, heatmap_from_frame_pair,
                      normalize_video, read_score_manifest, score_clip, suppress_noise,
                      write_clip_artifacts)
