"""Configuration objects: region of interest, dimension priors, loss weights.

Defaults reproduce the published training setup: a 40 m x 10 m x 100 m
region of interest, 5 cuboids per quadrant, 10 slots per cuboid and the
KITTI dimension priors.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class DimPriors:
    """Dataset min/max of object width, height and length, in meters."""

    w_min: float
    w_max: float
    h_min: float
    h_max: float
    l_min: float
    l_max: float

    def __post_init__(self):
        for name, lo, hi in self.ranges():
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ValueError(f"{name} prior must be finite")
            if lo > hi:
                raise ValueError(f"{name}_min={lo} exceeds {name}_max={hi}")

    def ranges(self):
        return (("w", self.w_min, self.w_max),
                ("h", self.h_min, self.h_max),
                ("l", self.l_min, self.l_max))

    @property
    def lows(self):
        return np.array([self.w_min, self.h_min, self.l_min])

    @property
    def spans(self):
        """Per-dimension (max - min); zero spans are mapped to 1 to keep the codec finite."""
        s = np.array([self.w_max - self.w_min, self.h_max - self.h_min, self.l_max - self.l_min])
        return np.where(s > 0, s, 1.0)

    def normalize(self, whl):
        """Map metric (w, h, l) to [0, 1]^3, clamping values outside the priors."""
        whl = np.asarray(whl, dtype=np.float64)
        return np.clip((whl - self.lows) / self.spans, 0.0, 1.0)

    def denormalize(self, whl_n):
        return self.lows + np.asarray(whl_n, dtype=np.float64) * self.spans


KITTI_PRIORS = DimPriors(w_min=0.30, w_max=3.01, h_min=0.76, h_max=4.20, l_min=0.20, l_max=35.24)
VKITTI2_PRIORS = DimPriors(w_min=1.13, w_max=3.02, h_min=1.22, h_max=4.20, l_min=2.22, l_max=16.44)

NAMED_PRIORS = {"kitti": KITTI_PRIORS, "vkitti2": VKITTI2_PRIORS}


@dataclass(frozen=True)
class RoiPriorConfig:
    """Extents of the cubified region of interest and the slot layout.

    ``x_max`` and ``y_max`` are half-extents: object centers must satisfy
    ``|x| <= x_max``, ``|y| <= y_max`` and ``0 < z <= z_max``.
    """

    x_max: float = 40.0
    y_max: float = 10.0
    z_max: float = 100.0
    M: int = 5
    N: int = 10
    dim_priors: DimPriors = KITTI_PRIORS

    def __post_init__(self):
        if min(self.x_max, self.y_max, self.z_max) <= 0:
            raise ValueError("ROI extents must be positive")
        if int(self.M) != self.M or int(self.N) != self.N or self.M < 1 or self.N < 1:
            raise ValueError("M and N must be positive integers")
        for name, lo, hi in self.dim_priors.ranges():
            if not lo < hi:
                raise ValueError(f"{name}_min must be strictly below {name}_max")

    @property
    def dz(self):
        return self.z_max / self.M

    @property
    def shape(self):
        """Shape of the label tensor: (4, M, N, 8)."""
        return (4, self.M, self.N, 8)

    @property
    def capacity(self):
        return 4 * self.M * self.N

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        priors = d.pop("dim_priors", None)
        if isinstance(priors, str):
            d["dim_priors"] = NAMED_PRIORS[priors.lower()]
        elif priors is not None:
            d["dim_priors"] = DimPriors(**priors)
        return cls(**d)


@dataclass(frozen=True)
class LossWeights:
    mse: float = 0.8
    eas: float = 0.2
    xyz: float = 5.0
    whl: float = 5.0
    orientation: float = 1.0
    iou: float = 0.01
    conf: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be non-negative")

    def scaled(self, **factors):
        return replace(self, **{k: getattr(self, k) * v for k, v in factors.items()})


KITTI_CLASSES = ("Car", "Van", "Truck", "Pedestrian", "Person_sitting", "Cyclist", "Tram", "Misc")


@dataclass(frozen=True)
class DifficultyRule:
    """KITTI eval-kit difficulty thresholds for one level."""

    min_height: float
    max_occlusion: int
    max_truncation: float


DEFAULT_DIFFICULTIES = {
    "easy": DifficultyRule(40.0, 0, 0.15),
    "moderate": DifficultyRule(25.0, 1, 0.30),
    "hard": DifficultyRule(25.0, 2, 0.50),
}


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the command line tools need, loadable from one JSON file."""

    roi: RoiPriorConfig = field(default_factory=RoiPriorConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    nms_threshold: float = 0.5
    conf_threshold: float = 0.5
    per_class_nms: bool = True
    classes: tuple = KITTI_CLASSES
    iou_thresholds: tuple = (0.3, 0.5, 0.7)
    difficulties: dict = field(default_factory=lambda: dict(DEFAULT_DIFFICULTIES))
    errmap_bin_width: float = 2.0

    def class_id(self, name):
        return self.classes.index(name)

    def to_dict(self):
        d = asdict(self)
        d["classes"] = list(self.classes)
        d["iou_thresholds"] = list(self.iou_thresholds)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "roi" in d:
            d["roi"] = RoiPriorConfig.from_dict(d["roi"])
        if "loss_weights" in d:
            d["loss_weights"] = LossWeights(**d["loss_weights"])
        if "classes" in d:
            d["classes"] = tuple(d["classes"])
        if "iou_thresholds" in d:
            d["iou_thresholds"] = tuple(float(t) for t in d["iou_thresholds"])
        if "difficulties" in d:
            d["difficulties"] = {k: DifficultyRule(**v) for k, v in d["difficulties"].items()}
        return cls(**d)

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        return cls.from_dict(json.loads(Path(path).read_text()))
