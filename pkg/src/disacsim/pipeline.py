"""Per-receiver processing between path estimation and fusion.

Stages, in order:

1. unwrap_delays -- measured delays are only known modulo 1/spacing, and
   a clock offset can push the direct path across the wrap boundary.
   All delays are shifted into one period anchored just below the
   strongest path.
2. identify_los -- pick the direct path (minimum delay among the
   strongest quartile) and flag ambiguous calls.
3. clutter_filter -- drop paths arriving from outside the receiver's
   field of interest; the direct path is exempt.
4. localize_single -- per-receiver weighted least squares turning each
   reflection path into a coarse scatterer position plus a receiver
   state (position, clock offset).
5. dbscan / build_associations -- cluster the coarse points across
   receivers and hand the grouping to the fusion center.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .estimator import EstimatedPath
from .fusion import (
    IllConditionedError,
    LosMeasurement,
    PathMeasurement,
    solve_wls,
)
from .geometry import BORESIGHT_ALONG_X, FoiBounds, as_vec3, direction_from_angles

logger = logging.getLogger(__name__)

DEFAULT_EPS_M = 2.0
DEFAULT_MIN_POINTS = 2
NOISE_LABEL = -1
LOS_QUANTILE = 0.75
UNWRAP_SLACK_FRACTION = 0.25


class LosIdentificationError(RuntimeError):
    pass


class LocalizationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Delay unwrapping and LoS identification
# ---------------------------------------------------------------------------


def unwrap_delays(
    paths: list[EstimatedPath],
    delay_period: float,
    slack_fraction: float = UNWRAP_SLACK_FRACTION,
) -> list[EstimatedPath]:
    """Shift all delays into one period anchored at the strongest path.

    The strongest path is usually the direct one, and every other path
    of the same receiver arrives later (modulo clock wrap). Delays are
    mapped into [t_ref - slack, t_ref - slack + period), which keeps the
    intra-receiver delay structure intact as long as true delays span
    less than one period and lie within [-slack, period - slack) of the
    anchor's true delay. The default quarter-period slack also survives
    the occasional case where a strong close-in reflection beats the
    direct path in gain while trailing it in delay.
    """
    if not paths:
        return []
    if delay_period <= 0.0:
        raise ValueError("delay_period must be positive")
    ref = max(paths, key=lambda p: abs(p.gain)).delay
    lo = ref - slack_fraction * delay_period
    out = []
    for p in paths:
        shifted = lo + (p.delay - lo) % delay_period
        out.append(
            EstimatedPath(
                gain=p.gain,
                delay=shifted,
                aoa=p.aoa,
                aod=p.aod,
                low_confidence=p.low_confidence,
            )
        )
    return out


def identify_los(
    paths: list[EstimatedPath], delay_resolution: float
) -> tuple[int, bool]:
    """Pick the direct path: earliest arrival among the strong ones.

    Candidates are paths with |gain| at or above the upper-quartile
    order statistic (lower interpolation, so the cut is inclusive);
    among them the minimum delay wins. The direct path always precedes
    any bounce of the same receiver in true delay, so it wins whenever
    it clears the gain cut; the inclusive cut matters because coherently
    merged scatterers can out-gain it. Returns (index, ambiguous) where
    ambiguous means a second candidate lies within one delay-resolution
    cell of the winner.
    """
    if not paths:
        raise LosIdentificationError("no paths to choose a direct path from")
    gains = np.array([abs(p.gain) for p in paths])
    threshold = np.quantile(gains, LOS_QUANTILE, method="lower")
    candidates = [i for i, g in enumerate(gains) if g >= threshold]
    best = min(candidates, key=lambda i: paths[i].delay)
    ambiguous = any(
        i != best and paths[i].delay - paths[best].delay < delay_resolution
        for i in candidates
    )
    return best, ambiguous


# ---------------------------------------------------------------------------
# Field-of-interest clutter filter
# ---------------------------------------------------------------------------


def clutter_filter(
    paths: list[EstimatedPath],
    foi: FoiBounds,
    los_index: int | None = None,
) -> list[int]:
    """Indices of paths whose arrival direction lies inside the field
    of interest. Bounds are closed; the direct path is always kept."""
    kept = []
    for i, p in enumerate(paths):
        if i == los_index or foi.contains(p.aoa):
            kept.append(i)
    return kept


# ---------------------------------------------------------------------------
# Per-receiver localization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalizedPoint:
    """Coarse scatterer position from a single receiver's view."""

    position: np.ndarray
    ue_id: int
    path_index: int  # index into the receiver's estimated path list
    weight: float


@dataclass
class SingleReceiverResult:
    """Output of one receiver's standalone localization."""

    ue_id: int
    ue_position: np.ndarray
    timing_offset: float
    los_range: float
    points: list[LocalizedPoint]
    measurements: list[PathMeasurement]
    los: LosMeasurement
    dropped_paths: dict[int, str]
    residual: float


def path_directions(
    path: EstimatedPath, rx_orientation: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Global-frame geometry of a path: (u_bs, u_v).

    u_bs points from the transmitter toward the scatterer (departure
    angles live in the transmitter's canonical frame). u_v is the
    propagation direction scatterer -> receiver: the arrival direction
    seen by the array points *at* the scatterer, so it is negated after
    rotation into the global frame.
    """
    u_bs = BORESIGHT_ALONG_X @ direction_from_angles(path.aod)
    u_v = -(np.asarray(rx_orientation, dtype=float) @ direction_from_angles(path.aoa))
    return u_bs, u_v


def localize_single(
    paths: list[EstimatedPath],
    los_index: int,
    ue_id: int,
    rx_orientation,
    p_bs,
    speed_of_light: float,
    weighting: str = "wls",
) -> SingleReceiverResult:
    """Per-receiver WLS: joint receiver state and per-path scatterers.

    Unknowns: one transmitter range r and one receiver range d per
    reflection path, then the receiver position (3), clock offset and
    LoS range, mirroring the fusion-center blocks (the clock column is
    kept as c * dt in meters for scaling). Each reflection path
    contributes its four rows, the direct path its four. Requires at
    least one reflection path; with none the clock offset and position
    cannot both be pinned.

    Scatterer points are re-projected as p_bs + r * u_bs. Paths whose
    estimated transmitter range comes out negative are dropped from the
    point list (kept in the report with a reason).
    """
    p_bs = as_vec3(p_bs)
    c = speed_of_light
    rot = np.asarray(rx_orientation, dtype=float)
    if not (0 <= los_index < len(paths)):
        raise LocalizationError(f"direct-path index {los_index} out of range")
    refl = [i for i in range(len(paths)) if i != los_index]
    if not refl:
        raise LocalizationError(
            "no reflection paths: receiver state is not identifiable from the direct path alone"
        )

    num_p = len(refl)
    cols = 2 * num_p + 5  # r_i, d_i, pos(3), dt, r_los
    col_pos = 2 * num_p
    col_dt = col_pos + 3
    col_rlos = col_dt + 1
    rows = 4 * num_p + 4
    a = np.zeros((rows, cols))
    b = np.zeros(rows)
    w = np.zeros(rows)

    measurements = []
    r = 0
    for j, i in enumerate(refl):
        p = paths[i]
        u_bs, u_v = path_directions(p, rot)
        weight = abs(p.gain)
        measurements.append(
            PathMeasurement(
                ue_id=ue_id, path_index=i, u_bs=u_bs, u_v=u_v,
                delay=p.delay, weight=weight,
            )
        )
        a[r : r + 3, 2 * j] = u_bs
        a[r : r + 3, 2 * j + 1] = u_v
        a[r : r + 3, col_pos : col_pos + 3] = -np.eye(3)
        b[r : r + 3] = -p_bs
        w[r : r + 3] = weight
        r += 3
        a[r, 2 * j] = 1.0
        a[r, 2 * j + 1] = 1.0
        a[r, col_dt] = 1.0  # clock column in meters (c * dt)
        b[r] = c * p.delay
        w[r] = weight
        r += 1

    los_path = paths[los_index]
    u_los = BORESIGHT_ALONG_X @ direction_from_angles(los_path.aod)
    los_meas = LosMeasurement(
        ue_id=ue_id, u_los=u_los, delay=los_path.delay, weight=abs(los_path.gain)
    )
    a[r : r + 3, col_pos : col_pos + 3] = np.eye(3)
    a[r : r + 3, col_rlos] = -u_los
    b[r : r + 3] = p_bs
    w[r : r + 3] = los_meas.weight
    r += 3
    a[r, col_rlos] = 1.0
    a[r, col_dt] = 1.0
    b[r] = c * los_path.delay
    w[r] = los_meas.weight
    r += 1
    assert r == rows

    if weighting == "ls":
        w = np.ones_like(w)
    elif weighting != "wls":
        raise ValueError(f"unknown weighting {weighting!r}")
    try:
        x, residual = solve_wls(a, b, w)
    except IllConditionedError as exc:
        raise LocalizationError(f"receiver {ue_id}: {exc}") from exc

    points = []
    dropped: dict[int, str] = {}
    for j, i in enumerate(refl):
        r_hat = float(x[2 * j])
        if r_hat < 0.0:
            dropped[i] = f"negative transmitter range {r_hat:.3f} m"
            continue
        u_bs = measurements[j].u_bs
        points.append(
            LocalizedPoint(
                position=p_bs + r_hat * u_bs,
                ue_id=ue_id,
                path_index=i,
                weight=measurements[j].weight,
            )
        )
    return SingleReceiverResult(
        ue_id=ue_id,
        ue_position=x[col_pos : col_pos + 3].copy(),
        timing_offset=float(x[col_dt]) / c,
        los_range=float(x[col_rlos]),
        points=points,
        measurements=measurements,
        los=los_meas,
        dropped_paths=dropped,
        residual=residual,
    )


# ---------------------------------------------------------------------------
# Density clustering
# ---------------------------------------------------------------------------


def dbscan(
    points: np.ndarray, eps: float = DEFAULT_EPS_M, min_points: int = DEFAULT_MIN_POINTS
) -> np.ndarray:
    """Euclidean DBSCAN, deterministic and order-canonical.

    A point is a core point when its closed eps-ball contains at least
    min_points points (itself included). Clusters are the connected
    components of the core-core adjacency graph; border points join the
    cluster of their nearest core point (ties broken toward the lower
    cluster label). Everything else is noise (-1). Labels are assigned
    in order of each component's smallest core index, so the same point
    set always yields the same labeling.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-d array")
    n = pts.shape[0]
    labels = np.full(n, NOISE_LABEL, dtype=int)
    if n == 0:
        return labels
    if eps <= 0.0 or min_points < 1:
        raise ValueError("eps must be positive and min_points at least 1")

    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    adjacent = dist <= eps
    core = adjacent.sum(axis=1) >= min_points

    next_label = 0
    for start in range(n):
        if not core[start] or labels[start] != NOISE_LABEL:
            continue
        stack = [start]
        labels[start] = next_label
        while stack:
            i = stack.pop()
            for j in np.nonzero(adjacent[i] & core)[0]:
                if labels[j] == NOISE_LABEL:
                    labels[j] = next_label
                    stack.append(int(j))
        next_label += 1

    for i in range(n):
        if core[i] or labels[i] != NOISE_LABEL:
            continue
        reachable = np.nonzero(adjacent[i] & core)[0]
        if reachable.size == 0:
            continue
        best = min(reachable, key=lambda j: (dist[i, j], labels[j]))
        labels[i] = labels[best]
    return labels


def build_associations(
    results: list[SingleReceiverResult],
    eps: float = DEFAULT_EPS_M,
    min_points: int = DEFAULT_MIN_POINTS,
) -> tuple[dict[int, dict[int, list[PathMeasurement]]], np.ndarray, list[LocalizedPoint]]:
    """Pool coarse points across receivers and cluster them.

    Returns (clusters, labels, pooled_points) where clusters maps
    cluster label -> receiver id -> the PathMeasurements whose points
    fell in that cluster. Noise points associate with nothing.
    """
    pooled: list[LocalizedPoint] = []
    meas_by_key: dict[tuple[int, int], PathMeasurement] = {}
    for res in results:
        pooled.extend(res.points)
        for m in res.measurements:
            meas_by_key[(m.ue_id, m.path_index)] = m
    if not pooled:
        return {}, np.empty(0, dtype=int), []
    coords = np.stack([p.position for p in pooled])
    labels = dbscan(coords, eps=eps, min_points=min_points)
    clusters: dict[int, dict[int, list[PathMeasurement]]] = {}
    for point, label in zip(pooled, labels):
        if label == NOISE_LABEL:
            continue
        per_ue = clusters.setdefault(int(label), {})
        per_ue.setdefault(point.ue_id, []).append(
            meas_by_key[(point.ue_id, point.path_index)]
        )
    return clusters, labels, pooled
