"""Fusion configuration: energy weights, batch length, optimizer settings.

The default weights and the batch length are tuned on the synthetic suite;
they are not published values. All weights are unitless and must be >= 0.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


@dataclass
class OptimizerSettings:
    max_outer: int = 500  # outer iterations; each refreshes contact targets
    inner_steps: int = 10  # descent steps per outer iteration (frozen targets)
    grad_tol: float = 1e-6  # infinity-norm gradient stopping tolerance
    step_init: float = 0.01
    step_grow: float = 1.5
    step_shrink: float = 0.5
    step_min: float = 1e-14
    # stop when the energy improves by less than progress_tol (relative)
    # over progress_window outer iterations; the unsquared-norm objective
    # has a long sublinear tail far below metric relevance
    progress_tol: float = 5e-3
    progress_window: int = 10


@dataclass
class FusionConfig:
    # term weights (Eq-level split: scene = contact + slide, sm = T + G + H)
    w_s: float = 1.0
    w_sc: float = 1.0
    w_c: float = 1.0
    w_v: float = 1.0
    w_sm: float = 1.0
    w_T: float = 0.5
    w_G: float = 0.5
    w_H: float = 0.5
    w_p: float = 10.0
    batch_length: int = 300
    batch_overlap: int = 30
    tangent_gap: int = 10
    heading_exact: bool = True  # False reproduces the sine-magnitude variant
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)

    def __post_init__(self):
        for name in ("w_s", "w_sc", "w_c", "w_v", "w_sm", "w_T", "w_G", "w_H", "w_p"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be >= 0")
        if self.batch_length < 2:
            raise ValueError("batch_length must be >= 2")
        if not 0 <= self.batch_overlap < self.batch_length:
            raise ValueError("batch_overlap must be in [0, batch_length)")

    def weights_dict(self) -> dict[str, float]:
        return {
            k: getattr(self, k)
            for k in ("w_s", "w_sc", "w_c", "w_v", "w_sm", "w_T", "w_G", "w_H", "w_p")
        }


def load_config(path: str | Path) -> FusionConfig:
    with open(path) as fh:
        doc = json.load(fh)
    opt = doc.pop("optimizer", {})
    return FusionConfig(optimizer=OptimizerSettings(**opt), **doc)


def save_config(cfg: FusionConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(cfg), fh, indent=2)
