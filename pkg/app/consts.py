"""Project constants."""

# Numerically clamped log floor used by every loss.
LOG_EPS = 1e-12

# Adam hyperparameters.
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

LEAKY_RELU_SLOPE = 0.2

# Default metric grid for ECE and calibration curves.
DEFAULT_METRIC_LEVELS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)

DEFAULT_KNN = 10
DOWNSTREAM_NEIGHBORS = 5

# Run directory file names.
GEN_CHECKPOINT = "gen.json"
DISC_CHECKPOINT = "disc.json"
TRAIN_LOG = "train_log.ndjson"
RESOLVED_CONFIG = "resolved_config.json"
STANDARDIZER = "standardizer.json"
CALIBRATOR = "calibrator.json"
REPORT = "report.json"
SPLIT_FILES = ("train.csv", "calib.csv", "val.csv", "test.csv")
COVERAGE_EFFICIENCY_CSV = "fig2_coverage_efficiency.csv"
CALIBRATION_CURVE_CSV = "fig3_calibration.csv"
WIDTH_DENSITY_CSV = "fig4_width_density.csv"
METHOD_COMPARISON_CSV = "method_comparison.csv"

# CLI exit codes.
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
