"""Metrics for edited videos, built so every number has an analytic oracle.

Edited objects carry a reserved marker color, so their realized motion is
recovered by a weighted color-distance centroid per frame, no tracker
involved. Commanded and source motions are known analytically from scene
construction, which makes endpoint error and motion attribution exact.

Reports are plain JSON with sorted keys and no timestamps; two runs of the
same pipeline on the same machine produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from .conditioning import EditMask
from .scenes import EDIT_MARKER_COLOR, PointTrack

PSNR_CAP = 99.0
MARKER_TOL = 0.35


class MarkerNotFound(ValueError):
    pass


# ---------------------------------------------------------------------------
# reconstruction quality


def region_psnr(a: np.ndarray, b: np.ndarray, region: np.ndarray) -> float:
    """PSNR over the pixels selected by a boolean (H, W) region, all frames
    and channels, for videos in [0, 1]. Capped at 99 dB; an exact match
    returns the cap."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ValueError("empty region")
    diff = (a - b)[:, :, region]
    mse = float(np.mean(diff**2))
    if mse <= 10 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP))


def boundary_band(mask: EditMask, radius: int = 4) -> np.ndarray:
    """Ring around the editable-region boundary: dilation of the editable
    set minus its erosion, each by `radius` steps of the 4-connected
    structuring element."""
    editable = mask.editable > 0.5
    grown = ndimage.binary_dilation(editable, iterations=radius)
    shrunk = ndimage.binary_erosion(editable, iterations=radius)
    return grown & ~shrunk


def boundary_band_mse(
    a: np.ndarray, b: np.ndarray, mask: EditMask, radius: int = 4
) -> float:
    band = boundary_band(mask, radius)
    if not band.any():
        raise ValueError("boundary band is empty")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.mean((a - b)[:, :, band] ** 2))


# ---------------------------------------------------------------------------
# marker localization


def locate_marker(
    video: np.ndarray,
    color: tuple[float, float, float] = EDIT_MARKER_COLOR,
    tol: float = MARKER_TOL,
) -> PointTrack:
    """Weighted-centroid track of the marker-colored object.

    Per frame, each pixel gets weight max(tol - d, 0) where d is the RGB
    distance to the marker color; the track point is the weight centroid.
    Raises MarkerNotFound if a frame has no pixel within tol.
    """
    v = np.asarray(video, dtype=np.float64)
    if v.ndim != 4 or v.shape[1] != 3:
        raise ValueError(f"video must be (N, 3, H, W), got {v.shape}")
    n, _, h, w = v.shape
    ref = np.asarray(color, dtype=np.float64)[None, :, None, None]
    dist = np.sqrt(((v - ref) ** 2).sum(axis=1))
    weight = np.maximum(tol - dist, 0.0)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    positions = np.empty((n, 2), dtype=np.float64)
    for i in range(n):
        total = weight[i].sum()
        if total <= 0:
            raise MarkerNotFound(f"no marker-colored pixels in frame {i}")
        positions[i, 0] = (weight[i] * xs).sum() / total
        positions[i, 1] = (weight[i] * ys).sum() / total
    return PointTrack(positions)


# ---------------------------------------------------------------------------
# motion metrics


def endpoint_error(realized: PointTrack, target: PointTrack) -> dict[str, float]:
    """Per-frame error between realized and target relative motion.

    Both tracks are re-anchored to their own frame-0 position, so the
    metric scores motion, not absolute placement. Returns the mean over
    frames 1..N-1 and the final-frame error."""
    if realized.num_frames != target.num_frames:
        raise ValueError("track lengths differ")
    rel_r = realized.positions - realized.positions[0]
    rel_t = target.positions - target.positions[0]
    err = np.linalg.norm(rel_r - rel_t, axis=1)
    return {"mean": float(err[1:].mean()), "final": float(err[-1])}


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; defined as 0 when either input has no variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    da, db = a - a.mean(), b - b.mean()
    va, vb = float((da**2).sum()), float((db**2).sum())
    if va <= 1e-24 or vb <= 1e-24:
        return 0.0
    return float((da * db).sum() / np.sqrt(va * vb))


def displacement_correlation(realized: PointTrack, reference: PointTrack) -> float:
    """Mean per-axis Pearson correlation of displacement sequences."""
    dr = realized.displacements[1:]
    df = reference.displacements[1:]
    return 0.5 * (pearson(dr[:, 0], df[:, 0]) + pearson(dr[:, 1], df[:, 1]))


def motion_attribution(
    realized: PointTrack, commanded: PointTrack, source: PointTrack
) -> dict[str, float]:
    """How much the realized motion follows the command vs the motion the
    source content implies."""
    return {
        "corr_commanded": displacement_correlation(realized, commanded),
        "corr_source": displacement_correlation(realized, source),
    }


def temporal_consistency(video: np.ndarray, region: np.ndarray) -> float:
    """Mean Pearson correlation of consecutive frames over a region.

    Constant frame pairs (no variance on either side) count as 1.0: a
    static region is perfectly consistent."""
    v = np.asarray(video, dtype=np.float64)
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ValueError("empty region")
    vals = v[:, :, region].reshape(v.shape[0], -1)
    scores = []
    for i in range(v.shape[0] - 1):
        a, b = vals[i], vals[i + 1]
        if float(a.var()) <= 1e-24 or float(b.var()) <= 1e-24:
            scores.append(1.0)
        else:
            scores.append(pearson(a, b))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# report files


def write_report(path: str | Path, data: dict):
    """Deterministic JSON: sorted keys, fixed separators, trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


def read_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
