"""posefusion: drift-free human trajectory and pose recovery.

Fuses per-frame IMU pose streams with noisy camera self-localization and
foot-scene contact constraints through a batched joint optimization, and
ships the supporting pieces: SO(3) math, a 24-joint kinematic body, exact
scene nearest-neighbor queries, a P3P/RANSAC camera localizer, trajectory
filtering, a synthetic-data generator, and evaluation metrics.
"""

__version__ = "0.1.0"
