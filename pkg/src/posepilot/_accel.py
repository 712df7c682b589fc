"""Hot numeric kernels: batch skeleton geometry and the rule grid search.

Every kernel ships in two equivalent implementations: a numba @njit loop
and a vectorized pure-numpy fallback. Selection happens once at import:
set POSEPILOT_NUMBA=0 to force the numpy path (numba also falls away
automatically when unimportable). `benchmarks/bench_kernels.py` compares
the two paths on the same inputs.

Feature columns produced by the batch kernel, NaN when undefined:
    0 knee_angle_left   1 knee_angle_right
    2 hip_angle_left    3 hip_angle_right
    4 torso_verticality 5 ankle_spread
Angles in degrees. COCO-17 keypoint order is assumed.
"""

from __future__ import annotations

import math
import os

import numpy as np

_FLAG = os.environ.get("POSEPILOT_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in {"0", "false", "no", "off"}

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay importable
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco


USE_NUMBA = _WANT_NUMBA and _HAVE_NUMBA

# keypoint indices (COCO-17)
_LSHO, _RSHO = 5, 6
_LHIP, _RHIP = 11, 12
_LKNE, _RKNE = 13, 14
_LANK, _RANK = 15, 16


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _angle_batch(xy, ok, b_idx, a_idx, c_idx):
    """Interior angle at joint b between segments b->a and b->c, degrees."""
    u = xy[:, a_idx] - xy[:, b_idx]
    v = xy[:, c_idx] - xy[:, b_idx]
    cross = np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
    dot = u[:, 0] * v[:, 0] + u[:, 1] * v[:, 1]
    ang = np.degrees(np.arctan2(cross, dot))
    valid = ok[:, a_idx] & ok[:, b_idx] & ok[:, c_idx]
    valid &= (u[:, 0] ** 2 + u[:, 1] ** 2 > 0) & (v[:, 0] ** 2 + v[:, 1] ** 2 > 0)
    return np.where(valid, ang, np.nan)


def features_batch_numpy(points: np.ndarray, conf_threshold: float) -> np.ndarray:
    """(n,17,3) keypoints -> (n,6) feature matrix, NaN for undefined entries."""
    pts = np.asarray(points, dtype=np.float64)
    xy = pts[:, :, :2]
    ok = pts[:, :, 2] >= conf_threshold
    n = pts.shape[0]
    out = np.full((n, 6), np.nan)

    out[:, 0] = _angle_batch(xy, ok, _LKNE, _LHIP, _LANK)
    out[:, 1] = _angle_batch(xy, ok, _RKNE, _RHIP, _RANK)
    out[:, 2] = _angle_batch(xy, ok, _LHIP, _LSHO, _LKNE)
    out[:, 3] = _angle_batch(xy, ok, _RHIP, _RSHO, _RKNE)

    # Torso segment: shoulder-mid -> hip-mid when all four points clear the
    # threshold, otherwise a single fully-confident side.
    mid_ok = ok[:, _LSHO] & ok[:, _RSHO] & ok[:, _LHIP] & ok[:, _RHIP]
    left_ok = ok[:, _LSHO] & ok[:, _LHIP]
    right_ok = ok[:, _RSHO] & ok[:, _RHIP]
    top = np.where(
        mid_ok[:, None],
        (xy[:, _LSHO] + xy[:, _RSHO]) / 2.0,
        np.where(left_ok[:, None], xy[:, _LSHO], xy[:, _RSHO]),
    )
    bot = np.where(
        mid_ok[:, None],
        (xy[:, _LHIP] + xy[:, _RHIP]) / 2.0,
        np.where(left_ok[:, None], xy[:, _LHIP], xy[:, _RHIP]),
    )
    seg_ok = mid_ok | left_ok | right_ok
    d = bot - top
    seg_len = np.hypot(d[:, 0], d[:, 1])
    seg_ok &= seg_len > 0
    vert = np.degrees(np.arctan2(np.abs(d[:, 0]), np.abs(d[:, 1])))
    out[:, 4] = np.where(seg_ok, vert, np.nan)

    ankles_ok = ok[:, _LANK] & ok[:, _RANK] & seg_ok
    safe_len = np.where(seg_len > 0, seg_len, 1.0)
    spread = np.abs(xy[:, _LANK, 0] - xy[:, _RANK, 0]) / safe_len
    out[:, 5] = np.where(ankles_ok, spread, np.nan)
    return out


def _side_means(feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean of left/right angles, falling back to the single defined side."""
    def mean2(cols):
        cnt = (~np.isnan(cols)).sum(axis=1)
        s = np.nansum(cols, axis=1)
        return np.where(cnt > 0, s / np.maximum(cnt, 1), np.nan)

    return mean2(feats[:, 0:2]), mean2(feats[:, 2:4])


def rule_apply_numpy(feats: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Apply the geometric decision rule row-wise; -1 marks unusable rows."""
    feats = np.asarray(feats, dtype=np.float64)
    t = np.asarray(thresholds, dtype=np.float64)
    knee, hip = _side_means(feats)
    vert, spread = feats[:, 4], feats[:, 5]
    usable = ~(np.isnan(knee) | np.isnan(hip) | np.isnan(vert) | np.isnan(spread))
    pred = np.full(feats.shape[0], 2, dtype=np.int64)
    sitting = (knee < t[0]) & (hip < t[1])
    standing = ~sitting & (knee > t[2]) & (vert < t[3]) & (spread < t[4])
    pred[sitting] = 0
    pred[standing] = 1
    pred[~usable] = -1
    return pred


def _macro_f1_rows(pred: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Macro F1 over 3 classes for each row of a (m,n) prediction matrix."""
    m = pred.shape[0]
    total = np.zeros(m)
    for c in range(3):
        is_p = pred == c
        is_t = labels[None, :] == c
        tp = (is_p & is_t).sum(axis=1)
        fp = (is_p & ~is_t).sum(axis=1)
        fn = (~is_p & is_t).sum(axis=1)
        den = 2 * tp + fp + fn
        total += np.where(den > 0, 2 * tp / np.maximum(den, 1), 0.0)
    return total / 3.0


def grid_scores_numpy(
    feats: np.ndarray, labels: np.ndarray, grid: np.ndarray, chunk: int = 4096
) -> np.ndarray:
    """Training macro F1 of the rule at every grid row. Rows must be usable."""
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    grid = np.asarray(grid, dtype=np.float64)
    knee, hip = _side_means(feats)
    vert, spread = feats[:, 4], feats[:, 5]
    out = np.empty(grid.shape[0])
    for lo in range(0, grid.shape[0], chunk):
        g = grid[lo : lo + chunk]
        sitting = (knee[None, :] < g[:, 0:1]) & (hip[None, :] < g[:, 1:2])
        standing = (
            ~sitting
            & (knee[None, :] > g[:, 2:3])
            & (vert[None, :] < g[:, 3:4])
            & (spread[None, :] < g[:, 4:5])
        )
        pred = np.full((g.shape[0], feats.shape[0]), 2, dtype=np.int8)
        pred[sitting] = 0
        pred[standing] = 1
        out[lo : lo + chunk] = _macro_f1_rows(pred, labels)
    return out


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

@njit(cache=True)
def _angle_scalar(bx, by, ax, ay, cx, cy):
    ux, uy = ax - bx, ay - by
    vx, vy = cx - bx, cy - by
    if (ux == 0.0 and uy == 0.0) or (vx == 0.0 and vy == 0.0):
        return np.nan
    cross = abs(ux * vy - uy * vx)
    dot = ux * vx + uy * vy
    return math.degrees(math.atan2(cross, dot))


@njit(cache=True)
def features_batch_numba(points, conf_threshold):
    n = points.shape[0]
    out = np.full((n, 6), np.nan)
    for i in range(n):
        p = points[i]
        ok = p[:, 2] >= conf_threshold
        if ok[_LHIP] and ok[_LKNE] and ok[_LANK]:
            out[i, 0] = _angle_scalar(
                p[_LKNE, 0], p[_LKNE, 1], p[_LHIP, 0], p[_LHIP, 1], p[_LANK, 0], p[_LANK, 1]
            )
        if ok[_RHIP] and ok[_RKNE] and ok[_RANK]:
            out[i, 1] = _angle_scalar(
                p[_RKNE, 0], p[_RKNE, 1], p[_RHIP, 0], p[_RHIP, 1], p[_RANK, 0], p[_RANK, 1]
            )
        if ok[_LSHO] and ok[_LHIP] and ok[_LKNE]:
            out[i, 2] = _angle_scalar(
                p[_LHIP, 0], p[_LHIP, 1], p[_LSHO, 0], p[_LSHO, 1], p[_LKNE, 0], p[_LKNE, 1]
            )
        if ok[_RSHO] and ok[_RHIP] and ok[_RKNE]:
            out[i, 3] = _angle_scalar(
                p[_RHIP, 0], p[_RHIP, 1], p[_RSHO, 0], p[_RSHO, 1], p[_RKNE, 0], p[_RKNE, 1]
            )

        mid_ok = ok[_LSHO] and ok[_RSHO] and ok[_LHIP] and ok[_RHIP]
        left_ok = ok[_LSHO] and ok[_LHIP]
        right_ok = ok[_RSHO] and ok[_RHIP]
        seg_ok = mid_ok or left_ok or right_ok
        if seg_ok:
            if mid_ok:
                tx = (p[_LSHO, 0] + p[_RSHO, 0]) / 2.0
                ty = (p[_LSHO, 1] + p[_RSHO, 1]) / 2.0
                bx = (p[_LHIP, 0] + p[_RHIP, 0]) / 2.0
                by = (p[_LHIP, 1] + p[_RHIP, 1]) / 2.0
            elif left_ok:
                tx, ty = p[_LSHO, 0], p[_LSHO, 1]
                bx, by = p[_LHIP, 0], p[_LHIP, 1]
            else:
                tx, ty = p[_RSHO, 0], p[_RSHO, 1]
                bx, by = p[_RHIP, 0], p[_RHIP, 1]
            dx, dy = bx - tx, by - ty
            seg_len = math.hypot(dx, dy)
            if seg_len > 0:
                out[i, 4] = math.degrees(math.atan2(abs(dx), abs(dy)))
                if ok[_LANK] and ok[_RANK]:
                    out[i, 5] = abs(p[_LANK, 0] - p[_RANK, 0]) / seg_len
    return out


@njit(cache=True)
def _means_scalar(f):
    knee = np.nan
    if not np.isnan(f[0]) and not np.isnan(f[1]):
        knee = (f[0] + f[1]) / 2.0
    elif not np.isnan(f[0]):
        knee = f[0]
    elif not np.isnan(f[1]):
        knee = f[1]
    hip = np.nan
    if not np.isnan(f[2]) and not np.isnan(f[3]):
        hip = (f[2] + f[3]) / 2.0
    elif not np.isnan(f[2]):
        hip = f[2]
    elif not np.isnan(f[3]):
        hip = f[3]
    return knee, hip


@njit(cache=True)
def rule_apply_numba(feats, thresholds):
    n = feats.shape[0]
    pred = np.empty(n, dtype=np.int64)
    t0, t1, t2, t3, t4 = (
        thresholds[0],
        thresholds[1],
        thresholds[2],
        thresholds[3],
        thresholds[4],
    )
    for i in range(n):
        knee, hip = _means_scalar(feats[i])
        vert, spread = feats[i, 4], feats[i, 5]
        if np.isnan(knee) or np.isnan(hip) or np.isnan(vert) or np.isnan(spread):
            pred[i] = -1
        elif knee < t0 and hip < t1:
            pred[i] = 0
        elif knee > t2 and vert < t3 and spread < t4:
            pred[i] = 1
        else:
            pred[i] = 2
    return pred


@njit(cache=True)
def grid_scores_numba(feats, labels, grid):
    m = grid.shape[0]
    n = feats.shape[0]
    knee = np.empty(n)
    hip = np.empty(n)
    for j in range(n):
        knee[j], hip[j] = _means_scalar(feats[j])
    out = np.empty(m)
    for i in range(m):
        t0, t1, t2, t3, t4 = grid[i, 0], grid[i, 1], grid[i, 2], grid[i, 3], grid[i, 4]
        tp = np.zeros(3)
        fp = np.zeros(3)
        fn = np.zeros(3)
        for j in range(n):
            if knee[j] < t0 and hip[j] < t1:
                p = 0
            elif knee[j] > t2 and feats[j, 4] < t3 and feats[j, 5] < t4:
                p = 1
            else:
                p = 2
            t = labels[j]
            if p == t:
                tp[p] += 1
            else:
                fp[p] += 1
                fn[t] += 1
        s = 0.0
        for c in range(3):
            den = 2 * tp[c] + fp[c] + fn[c]
            if den > 0:
                s += 2 * tp[c] / den
        out[i] = s / 3.0
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    features_batch = features_batch_numba
    rule_apply = rule_apply_numba
    grid_scores = grid_scores_numba
else:
    features_batch = features_batch_numpy
    rule_apply = rule_apply_numpy
    grid_scores = grid_scores_numpy

#: benchmark/bench_kernels.py iterates this to time both paths.
IMPLEMENTATIONS = {
    "features_batch": {
        "numpy": features_batch_numpy,
        "numba": features_batch_numba if _HAVE_NUMBA else None,
    },
    "rule_apply": {
        "numpy": rule_apply_numpy,
        "numba": rule_apply_numba if _HAVE_NUMBA else None,
    },
    "grid_scores": {
        "numpy": grid_scores_numpy,
        "numba": grid_scores_numba if _HAVE_NUMBA else None,
    },
}
