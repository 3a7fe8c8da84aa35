"""Various constants useful throughout the library."""

from os import path

# Absolute path to the eqaug directory
EQAUG_ROOT = path.dirname(__file__)

# Parameter norm above which an integration is declared diverged
DIVERGENCE_NORM = 1e12

# Floor applied to distances before taking logarithms
LOG_FLOOR = 1e-14

# Modified Gram-Schmidt drops directions with a residual norm below this
GRAM_SCHMIDT_DROP = 1e-10

# Commutator norm under which Pi_L and Pi_G are considered commuting
COMPATIBILITY_TOLERANCE = 1e-10

# Layers with more entries than this use the reduced commutator formula
CANONICAL_COMMUTATOR_LIMIT = 1024

# Up to this many T E-perp dimensions sigma is computed by a dense eigensolve
DENSE_SIGMA_LIMIT = 256

# Distances to E below this, relative to 1 + |A|, are rounding noise
DIST_NOISE_FLOOR = 1e-12

# Attractor runs use steps of at most this fraction of 1 / gamma
ATTRACTOR_STEP_GAMMA = 0.1

# Attractor runs stop after this many e-foldings at rate gamma + |sigma|
ATTRACTOR_HORIZON = 15.0

# Format of floating point values in emitted CSV files
CSV_FLOAT_FORMAT = "%.12e"

# Header of every trajectory CSV file
TRAJECTORY_HEADER = (
    "step",
    "time",
    "dist_E",
    "risk",
    "aug_risk",
    "reg_loss",
    "param_norm",
)
