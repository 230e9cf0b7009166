"""Depth and detection losses with analytic gradients.

Detection losses take label tensors of shape (4, M, N, 8) and an occupancy
mask of shape (4, M, N). Every ``*_grad`` function returns the derivative
of its loss with respect to the prediction argument, with the same shape
as that argument.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .config import LossWeights, RoiPriorConfig
from .cubify import F_CONF, F_L, F_O, F_W, F_X, F_Y, F_Z, decode_slots
from .exceptions import BoundaryPoint, NegativeDimension, ShapeMismatch
from .iou import iou_3d_with_grad, iou_pairs
from .validation import check_same_shape

IOU_EPS = 1e-7


@dataclass
class DepthMap:
    """Dense depth grid of shape (rows, cols).

    ``state`` is ``"raw"`` (meters) or ``"normalized"`` ([-0.5, 0.5]).
    """

    values: np.ndarray
    state: str = "raw"
    max_depth: float = 100.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.state not in ("raw", "normalized"):
            raise ValueError(f"unknown depth state {self.state!r}")
        if self.values.ndim != 2:
            raise ShapeMismatch("depth map must be 2-D")

    def normalized(self):
        if self.state == "normalized":
            return self
        clamped = np.clip(self.values, 0.0, self.max_depth)
        return DepthMap(clamped / self.max_depth - 0.5, "normalized", self.max_depth)

    def raw(self):
        if self.state == "raw":
            return self
        return DepthMap((self.values + 0.5) * self.max_depth, "raw", self.max_depth)


def _depth_values(d):
    if isinstance(d, DepthMap):
        if d.state != "normalized":
            raise ValueError("depth losses expect normalized depth maps")
        return d.values
    return np.asarray(d, dtype=np.float64)


# --- depth branch ------------------------------------------------------------


def mse_loss(pred, gt, lam=0.8):
    p, g = check_same_shape(_depth_values(pred), _depth_values(gt), "depth map")
    return lam * float(np.sum((g - p) ** 2)) / p.size


def mse_loss_grad(pred, gt, lam=0.8):
    p, g = check_same_shape(_depth_values(pred), _depth_values(gt), "depth map")
    return -2.0 * lam * (g - p) / p.size


def _forward_dx(a):
    # forward difference along columns, zero in the last column
    out = np.zeros_like(a)
    out[:, :-1] = a[:, 1:] - a[:, :-1]
    return out


def _forward_dy(a):
    out = np.zeros_like(a)
    out[:-1, :] = a[1:, :] - a[:-1, :]
    return out


def _intensity(image):
    img = np.asarray(image, dtype=np.float64)
    return img.mean(axis=2) if img.ndim == 3 else img


def _edge_weights(pred, image):
    p = _depth_values(pred)
    gray = _intensity(image)
    if gray.shape != p.shape:
        raise ShapeMismatch(f"image {gray.shape} and depth {p.shape} differ")
    return p, np.exp(-np.abs(_forward_dx(gray))), np.exp(-np.abs(_forward_dy(gray)))


def eas_loss(pred, image, lam=0.2):
    """Edge-aware smoothness of a predicted depth map.

    ``image`` is (rows, cols, 3) RGB in [0, 1] or a (rows, cols) intensity
    grid; x runs along columns.
    """
    p, wx, wy = _edge_weights(pred, image)
    s = np.sum(np.abs(_forward_dx(p)) * wx) + np.sum(np.abs(_forward_dy(p)) * wy)
    return lam * float(s) / p.size


def eas_loss_grad(pred, image, lam=0.2):
    p, wx, wy = _edge_weights(pred, image)
    gx = np.sign(_forward_dx(p)) * wx
    gy = np.sign(_forward_dy(p)) * wy
    g = np.zeros_like(p)
    # d|p[j+1]-p[j]| spreads +s to j+1 and -s to j
    g[:, 1:] += gx[:, :-1]
    g[:, :-1] -= gx[:, :-1]
    g[1:, :] += gy[:-1, :]
    g[:-1, :] -= gy[:-1, :]
    return lam * g / p.size


def depth_loss(pred, gt, image, weights=None):
    """Returns ``(mse, eas, total)`` for the depth auto-encoder objective."""
    weights = weights or LossWeights()
    mse = mse_loss(pred, gt, weights.mse)
    eas = eas_loss(pred, image, weights.eas)
    return mse, eas, mse + eas


# --- detection branch ----------------------------------------------------------


def _prep(pred, gt, mask):
    p, g = check_same_shape(pred, gt, "label tensor")
    m = np.asarray(mask, dtype=bool)
    if m.shape != p.shape[:-1]:
        raise ShapeMismatch(f"mask {m.shape} does not match tensor {p.shape}")
    return p, g, m


def _masked_sq(pred, gt, mask, cols, lam):
    p, g, m = _prep(pred, gt, mask)
    n = int(m.sum())
    if n == 0:
        return 0.0
    d = g[m][:, cols] - p[m][:, cols]
    return lam * float(np.sum(d * d)) / n


def _masked_sq_grad(pred, gt, mask, cols, lam):
    p, g, m = _prep(pred, gt, mask)
    out = np.zeros_like(p)
    n = int(m.sum())
    if n:
        sub = np.zeros_like(p)
        sub[..., cols] = -2.0 * lam * (g[..., cols] - p[..., cols]) / n
        out[m] = sub[m]
    return out


_XYZ = [F_X, F_Y, F_Z]
_WHL = [F_W, F_W + 1, F_L]


def xyz_loss(pred, gt, mask, lam=5.0):
    """Masked squared error of normalized centers, averaged over true objects."""
    return _masked_sq(pred, gt, mask, _XYZ, lam)


def xyz_loss_grad(pred, gt, mask, lam=5.0):
    return _masked_sq_grad(pred, gt, mask, _XYZ, lam)


def orientation_loss(pred, gt, mask, lam=1.0):
    return _masked_sq(pred, gt, mask, [F_O], lam)


def orientation_loss_grad(pred, gt, mask, lam=1.0):
    return _masked_sq_grad(pred, gt, mask, [F_O], lam)


def _check_whl(p, g, m):
    if np.any(p[m][:, _WHL] < 0) or np.any(g[m][:, _WHL] < 0):
        raise NegativeDimension("masked width/height/length entries must be non-negative")


def whl_loss(pred, gt, mask, lam=5.0):
    """Masked squared error between square roots of normalized dimensions."""
    p, g, m = _prep(pred, gt, mask)
    _check_whl(p, g, m)
    n = int(m.sum())
    if n == 0:
        return 0.0
    d = np.sqrt(g[m][:, _WHL]) - np.sqrt(p[m][:, _WHL])
    return lam * float(np.sum(d * d)) / n


def whl_loss_grad(pred, gt, mask, lam=5.0):
    p, g, m = _prep(pred, gt, mask)
    _check_whl(p, g, m)
    out = np.zeros_like(p)
    n = int(m.sum())
    if n:
        sp, sg = np.sqrt(p[m][:, _WHL]), np.sqrt(g[m][:, _WHL])
        with np.errstate(divide="ignore", invalid="ignore"):
            gw = -lam * (sg - sp) / (sp * n)
        sub = out[m]
        sub[:, _WHL] = gw
        out[m] = sub
    return out


def conf_loss(pred, gt, mask, lam=0.5):
    """Squared confidence error over every slot, positive and empty alike."""
    p, g, m = _prep(pred, gt, mask)
    t = m.astype(np.float64)
    d2 = (g[..., F_CONF] - p[..., F_CONF]) ** 2
    return lam * float(np.sum(t * d2 + (1.0 - t) * d2)) / m.size


def conf_loss_grad(pred, gt, mask, lam=0.5):
    p, g, m = _prep(pred, gt, mask)
    out = np.zeros_like(p)
    out[..., F_CONF] = -2.0 * lam * (g[..., F_CONF] - p[..., F_CONF]) / m.size
    return out


def _check_box_params(pred_boxes, gt_boxes, mask):
    p, g = check_same_shape(pred_boxes, gt_boxes, "decoded boxes")
    m = np.asarray(mask, dtype=bool)
    if p.shape[-1] != 7 or m.shape != p.shape[:-1]:
        raise ShapeMismatch(f"decoded boxes {p.shape} do not match mask {m.shape}")
    return p, g, m


def iou_loss(pred_boxes, gt_boxes, mask, lam=0.01, eps=IOU_EPS):
    """Mean negative log 3D IoU over true objects.

    ``pred_boxes``/``gt_boxes`` hold metric (x, y, z, w, h, l, yaw) per
    slot, shape (..., 7); pairs are matched by slot. IoU is clamped below
    at ``eps``.
    """
    p, g, m = _check_box_params(pred_boxes, gt_boxes, mask)
    n = int(m.sum())
    if n == 0:
        return 0.0
    ious = iou_pairs(p[m], g[m])
    return lam * float(np.sum(-np.log(np.maximum(ious, eps)))) / n


def iou_loss_grad(pred_boxes, gt_boxes, mask, lam=0.01, eps=IOU_EPS):
    p, g, m = _check_box_params(pred_boxes, gt_boxes, mask)
    out = np.zeros_like(p)
    n = int(m.sum())
    if n == 0:
        return out
    for idx in zip(*np.nonzero(m)):
        iou, grad = iou_3d_with_grad(p[idx], g[idx])
        if iou > eps:
            out[idx] = -lam * grad / (iou * n)
    return out


def iou_margin(pred_boxes, gt_boxes, mask, eps=IOU_EPS, speeds=None):
    """Smallest parameter-space distance to a non-smooth point over masked pairs.

    The geometric margin (meters) of each pair is divided by the fastest
    vertex speed per unit parameter step: 1 for x, y, z, w, h, l and the
    footprint half-diagonal for yaw. ``speeds`` replaces the per-axis
    factors (x, y, z, w, h, l, yaw-per-meter-of-radius) when the parameters
    are rescaled. Returns 0 when the eps clamp is active.
    """
    p, g, m = _check_box_params(pred_boxes, gt_boxes, mask)
    speeds = np.ones(7) if speeds is None else np.asarray(speeds, dtype=np.float64)
    margin = math.inf
    for idx in zip(*np.nonzero(m)):
        iou, _, mg = iou_3d_with_grad(p[idx], g[idx], return_margin=True)
        if iou <= eps:
            return 0.0
        radius = 0.5 * math.hypot(p[idx][3], p[idx][5])
        fastest = max(speeds[:6].max(), speeds[6] * radius)
        margin = min(margin, mg / fastest)
    return margin


@dataclass
class LossBreakdown:
    xyz: float = 0.0
    whl: float = 0.0
    orientation: float = 0.0
    iou: float = 0.0
    conf: float = 0.0
    total: float = 0.0
    mse: float = 0.0
    eas: float = 0.0
    depth_total: float = 0.0

    _KEYS = {"xyz": "xyz_loss", "whl": "whl_loss", "orientation": "orientation_loss",
             "iou": "iou_loss", "conf": "conf_loss", "total": "total_loss",
             "mse": "mse_loss", "eas": "eas_loss", "depth_total": "depth_loss"}

    def to_dict(self):
        return {self._KEYS[k]: v for k, v in asdict(self).items()}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _decode_jacobian(cfg, M):
    """d(metric params)/d(normalized fields) for each slot, as a (4, M, 1, 7) diagonal."""
    q = np.arange(4)[:, None, None]
    sx = np.where(q % 2 == 1, 1.0, -1.0) * cfg.x_max
    sy = np.where(q // 2 == 1, 1.0, -1.0) * cfg.y_max
    jac = np.zeros((4, M, 1, 7))
    jac[..., 0] = sx
    jac[..., 1] = sy
    jac[..., 2] = cfg.dz
    jac[..., 3:6] = cfg.dim_priors.spans
    jac[..., 6] = 2 * math.pi
    return jac


def total_detection_loss(pred, gt, mask, weights=None, cfg=None):
    """All five detection loss terms; the IoU term decodes both tensors slot-by-slot."""
    weights = weights or LossWeights()
    cfg = cfg or RoiPriorConfig()
    p, g, m = _prep(pred, gt, mask)
    b = LossBreakdown(
        xyz=xyz_loss(p, g, m, weights.xyz),
        whl=whl_loss(p, g, m, weights.whl),
        orientation=orientation_loss(p, g, m, weights.orientation),
        iou=iou_loss(decode_slots(p, cfg), decode_slots(g, cfg), m, weights.iou),
        conf=conf_loss(p, g, m, weights.conf),
    )
    b.total = b.xyz + b.whl + b.orientation + b.iou + b.conf
    return b


def total_detection_loss_grad(pred, gt, mask, weights=None, cfg=None):
    weights = weights or LossWeights()
    cfg = cfg or RoiPriorConfig()
    p, g, m = _prep(pred, gt, mask)
    out = (xyz_loss_grad(p, g, m, weights.xyz) + whl_loss_grad(p, g, m, weights.whl)
           + orientation_loss_grad(p, g, m, weights.orientation) + conf_loss_grad(p, g, m, weights.conf))
    g_iou = iou_loss_grad(decode_slots(p, cfg), decode_slots(g, cfg), m, weights.iou)
    out[..., F_X:F_O + 1] += g_iou * _decode_jacobian(cfg, p.shape[1])
    return out


# --- gradient verification -----------------------------------------------------


@dataclass
class Objective:
    """A scalar function of one array argument with its analytic gradient.

    ``margin(point)`` returns the distance to the nearest non-smooth point
    (kink, clamp); ``grad_check`` refuses points closer than the step.
    """

    value: object
    grad: object
    margin: object = None
    name: str = ""


def grad_check(objective, point, h=1e-5):
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    Raises:
        BoundaryPoint: if the point lies within ``2 h`` of a kink or clamp.
    """
    x = np.array(point, dtype=np.float64, copy=True)
    if objective.margin is not None:
        mg = objective.margin(x)
        if mg <= 2 * h:
            raise BoundaryPoint(f"{objective.name or 'objective'}: margin {mg:.3g} within step {h}")
    analytic = np.asarray(objective.grad(x), dtype=np.float64)
    if analytic.shape != x.shape:
        raise ShapeMismatch(f"gradient shape {analytic.shape} != point shape {x.shape}")
    worst = 0.0
    flat, g_flat = x.reshape(-1), analytic.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = objective.value(x)
        flat[i] = orig - h
        fm = objective.value(x)
        flat[i] = orig
        fd = (fp - fm) / (2 * h)
        worst = max(worst, abs(g_flat[i] - fd) / max(1.0, abs(g_flat[i])))
    return worst


def _min_abs_diff(p):
    d = np.concatenate([np.abs(np.diff(p, axis=1)).ravel(), np.abs(np.diff(p, axis=0)).ravel()])
    return float(d.min()) / 2 if d.size else math.inf


def objective(name, *, gt=None, mask=None, image=None, weights=None, cfg=None):
    """Build an :class:`Objective` of the prediction for the named loss.

    Names: ``mse``, ``eas``, ``xyz``, ``whl``, ``orientation``, ``conf``,
    ``iou`` (point is (..., 7) metric box params), ``total``.
    """
    w = weights or LossWeights()
    cfg = cfg or RoiPriorConfig()
    if name == "mse":
        return Objective(lambda p: mse_loss(p, gt, w.mse), lambda p: mse_loss_grad(p, gt, w.mse), None, name)
    if name == "eas":
        return Objective(lambda p: eas_loss(p, image, w.eas), lambda p: eas_loss_grad(p, image, w.eas),
                         _min_abs_diff, name)
    m = np.asarray(mask, dtype=bool)
    if name == "xyz":
        return Objective(lambda p: xyz_loss(p, gt, m, w.xyz), lambda p: xyz_loss_grad(p, gt, m, w.xyz), None, name)
    if name == "orientation":
        return Objective(lambda p: orientation_loss(p, gt, m, w.orientation),
                         lambda p: orientation_loss_grad(p, gt, m, w.orientation), None, name)
    if name == "conf":
        return Objective(lambda p: conf_loss(p, gt, m, w.conf), lambda p: conf_loss_grad(p, gt, m, w.conf), None, name)

    def whl_margin(p):
        vals = p[m][:, _WHL]
        return float(vals.min()) if vals.size else math.inf

    if name == "whl":
        return Objective(lambda p: whl_loss(p, gt, m, w.whl), lambda p: whl_loss_grad(p, gt, m, w.whl),
                         whl_margin, name)
    if name == "iou":
        return Objective(lambda p: iou_loss(p, gt, m, w.iou), lambda p: iou_loss_grad(p, gt, m, w.iou),
                         lambda p: iou_margin(p, gt, m), name)
    if name == "total":
        gt_boxes = decode_slots(gt, cfg)

        # meters moved per unit step of each normalized field
        speeds = np.array([cfg.x_max, cfg.y_max, cfg.dz, *cfg.dim_priors.spans, 2 * math.pi])

        def total_margin(p):
            return min(whl_margin(p), iou_margin(decode_slots(p, cfg), gt_boxes, m, speeds=speeds))

        return Objective(lambda p: total_detection_loss(p, gt, m, w, cfg).total,
                         lambda p: total_detection_loss_grad(p, gt, m, w, cfg), total_margin, name)
    raise ValueError(f"unknown loss {name!r}")
