"""Hot-spot detection in thermal frames and 3D localization by depth fusion.

Detection is a plain value threshold plus 4-connected components; localization
iteratively corrects the parallax between the thermal ray and the offset depth
camera until the range estimate settles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import UnitRay, apply as tf_apply, project_point, BehindCameraError


class NoDepthError(RuntimeError):
    """Every depth pixel in the sampling window was a no-return."""


class OutOfFrustumError(RuntimeError):
    """Re-projection of the working point left the depth image."""


@dataclass
class HotspotDetection:
    centroid: tuple          # (u, v) pixels, area-weighted
    peak_temp: float
    pixel_count: int
    ray: UnitRay             # thermal-camera frame


@dataclass
class TargetEstimate:
    position: np.ndarray     # meters, end-effector (thermal) camera frame
    range: float
    timestamp: float
    iterations: int = 0


def detect_hotspots(img, threshold, intr, min_blob_pixels=2):
    """4-connected components of pixels >= threshold, largest first.

    Each component with at least min_blob_pixels pixels becomes a detection
    whose ray back-projects the area-weighted centroid.
    """
    mask = img.values >= threshold
    if not mask.any():
        return []
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=int)
    detections = []
    hot = np.argwhere(mask)
    for v0, u0 in hot:
        if labels[v0, u0]:
            continue
        label = len(detections) + 1
        stack = [(v0, u0)]
        labels[v0, u0] = label
        pixels = []
        while stack:
            v, u = stack.pop()
            pixels.append((v, u))
            for dv, du in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                vv, uu = v + dv, u + du
                if 0 <= vv < h and 0 <= uu < w and mask[vv, uu] and not labels[vv, uu]:
                    labels[vv, uu] = label
                    stack.append((vv, uu))
        if len(pixels) < min_blob_pixels:
            continue
        px = np.array(pixels, dtype=float)
        cv, cu = px.mean(axis=0)
        peak = float(max(img.values[v, u] for v, u in pixels))
        d = np.array([(cu - intr.cx) / intr.fx, (cv - intr.cy) / intr.fy, 1.0])
        detections.append(HotspotDetection(
            centroid=(cu, cv),
            peak_temp=peak,
            pixel_count=len(pixels),
            ray=UnitRay(origin=np.zeros(3), direction=d / np.linalg.norm(d)),
        ))
    detections.sort(key=lambda det: (-det.pixel_count, -det.peak_temp, det.centroid[0]))
    return detections


def select_target(detections):
    """Largest-area detection; ties by peak temperature, then leftmost."""
    if not detections:
        return None
    return min(detections,
               key=lambda det: (-det.pixel_count, -det.peak_temp, det.centroid[0]))


def localize_target(det, depth, extrinsic, depth_intr, initial_range=2.0,
                    tol=0.005, max_iterations=10, window=5, max_skew_s=0.15,
                    det_timestamp=None):
    """Fuse one detection with a depth frame into a 3D target estimate.

    Iterative parallax correction: hypothesize a range along the thermal ray,
    re-project that point into the depth camera through the extrinsic, read
    the median range in a window, repeat until the range moves less than
    `tol` or `max_iterations` is reached. The result is expressed in the
    thermal (end-effector) camera frame.
    """
    if det_timestamp is not None and abs(det_timestamp - depth.timestamp) > max_skew_s:
        raise ValueError(
            f"detection/depth skew {abs(det_timestamp - depth.timestamp):.3f}s "
            f"exceeds {max_skew_s}s")
    ov, ou = getattr(depth, "origin", (0, 0))
    h, w = depth.values.shape
    half = window // 2
    d = float(initial_range)
    iterations = 0
    for _ in range(max_iterations):
        iterations += 1
        p_thermal = d * det.ray.direction
        p_depth = tf_apply(extrinsic, p_thermal)
        try:
            u, v = project_point(depth_intr, p_depth)
        except BehindCameraError as e:
            raise OutOfFrustumError(str(e)) from e
        if not (0 <= u < depth_intr.width and 0 <= v < depth_intr.height):
            raise OutOfFrustumError(f"pixel ({u:.1f}, {v:.1f}) outside depth image")
        vi, ui = int(round(v)) - ov, int(round(u)) - ou
        if not (0 <= vi < h and 0 <= ui < w):
            raise OutOfFrustumError("pixel outside rendered depth window")
        win = depth.values[max(0, vi - half):vi + half + 1,
                           max(0, ui - half):ui + half + 1]
        valid = win[win > 0.0]
        if valid.size == 0:
            raise NoDepthError("no depth return in sampling window")
        d_next = float(np.median(valid))
        done = abs(d_next - d) < tol
        d = d_next
        if done:
            break
    return TargetEstimate(
        position=d * det.ray.direction,
        range=d,
        timestamp=depth.timestamp,
        iterations=iterations,
    )
