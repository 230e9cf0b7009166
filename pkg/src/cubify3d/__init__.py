"""Cubified label codec, rotated 3D IoU, detection losses and evaluation
for monocular 3D object detection."""
from .config import (KITTI_CLASSES, KITTI_PRIORS, VKITTI2_PRIORS, DimPriors, LossWeights, PipelineConfig,
                     RoiPriorConfig)
from .cubify import CubifyEncoder, decode, encode
from .evaluation import DetectionEvaluator, ap_101, ap_r11
from .geometry import Box3D, CameraIntrinsics, Rect2D
from .iou import bev_iou, iou_3d
from .matching import NMSFilter, assign, nms

__all__ = [
    "Box3D", "CameraIntrinsics", "Rect2D", "RoiPriorConfig", "DimPriors", "LossWeights", "PipelineConfig",
    "KITTI_PRIORS", "VKITTI2_PRIORS", "KITTI_CLASSES", "encode", "decode", "CubifyEncoder",
    "iou_3d", "bev_iou", "nms", "assign", "NMSFilter", "ap_101", "ap_r11", "DetectionEvaluator",
]
__version__ = "0.1.0"
