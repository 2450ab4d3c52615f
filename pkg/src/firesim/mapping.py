"""2D layout extraction from 3D scans, door-gap finding, occupancy-grid path
planning, wall-following search waypoints, and pure-pursuit tracking."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2D, normalize_angle

SQRT2 = math.sqrt(2.0)


class InsufficientPointsError(ValueError):
    pass


class StandoffInfeasibleError(ValueError):
    pass


class GoalOccupiedError(ValueError):
    pass


class NoPathError(RuntimeError):
    pass


@dataclass
class Segment2D:
    p0: np.ndarray
    p1: np.ndarray

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float)
        self.p1 = np.asarray(self.p1, dtype=float)

    @property
    def direction(self):
        d = self.p1 - self.p0
        return d / np.linalg.norm(d)

    @property
    def length(self):
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def midpoint(self):
        return 0.5 * (self.p0 + self.p1)


@dataclass
class Gap:
    segment_index: int
    center: np.ndarray
    width: float


@dataclass
class LayoutEstimate:
    wall_lines: list
    gaps: list


@dataclass
class WaypointList:
    poses: list
    contexts: list

    def signed_area(self):
        pts = [(p.x, p.y) for p in self.poses]
        s = 0.0
        for i in range(len(pts) - 1):
            x0, y0 = pts[i]
            x1, y1 = pts[i + 1]
            s += x0 * y1 - x1 * y0
        return 0.5 * s


def extract_vertical_planes(cloud, z_band=(0.3, 2.5), inlier_dist=0.05,
                            min_inliers=50, gap_split=0.3, rng=None,
                            trials=150, max_lines=16, min_cluster_points=5):
    """Fit wall segments to a 3D point cloud.

    Points inside the height band are projected to 2D, then greedy sequential
    RANSAC extracts lines; inliers of each line are split into collinear
    segments wherever consecutive points are more than `gap_split` apart.
    """
    cloud = np.asarray(cloud, dtype=float)
    if cloud.ndim != 2 or cloud.shape[0] == 0:
        raise InsufficientPointsError("empty cloud")
    pts = cloud[(cloud[:, 2] >= z_band[0]) & (cloud[:, 2] <= z_band[1])][:, :2]
    if pts.shape[0] < min_inliers:
        raise InsufficientPointsError(
            f"{pts.shape[0]} points in height band, need {min_inliers}")
    if rng is None:
        rng = np.random.default_rng(0)

    segments = []
    remaining = pts
    for _ in range(max_lines):
        n = remaining.shape[0]
        if n < min_inliers:
            break
        best_count, best_mask = 0, None
        for _ in range(trials):
            i, j = rng.integers(0, n, size=2)
            if i == j:
                continue
            a, b = remaining[i], remaining[j]
            d = b - a
            norm = np.linalg.norm(d)
            if norm < 1e-9:
                continue
            d = d / norm
            rel = remaining - a
            dist = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0])
            mask = dist <= inlier_dist
            count = int(mask.sum())
            if count > best_count:
                best_count, best_mask = count, mask
        if best_count < min_inliers:
            break
        # total-least-squares refit on the consensus set, then re-gate once
        inliers = remaining[best_mask]
        center = inliers.mean(axis=0)
        cov = np.cov((inliers - center).T)
        eigvals, eigvecs = np.linalg.eigh(cov)
        direction = eigvecs[:, int(np.argmax(eigvals))]
        rel = remaining - center
        dist = np.abs(rel[:, 0] * direction[1] - rel[:, 1] * direction[0])
        best_mask = dist <= inlier_dist
        inliers = remaining[best_mask]
        if inliers.shape[0] < min_inliers:
            remaining = remaining[dist > 2.0 * inlier_dist]
            continue
        center = inliers.mean(axis=0)
        cov = np.cov((inliers - center).T)
        eigvals, eigvecs = np.linalg.eigh(cov)
        direction = eigvecs[:, int(np.argmax(eigvals))]
        proj = (inliers - center) @ direction
        order = np.argsort(proj)
        proj_sorted = proj[order]
        breaks = np.flatnonzero(np.diff(proj_sorted) > gap_split)
        bounds = [0] + (breaks + 1).tolist() + [len(proj_sorted)]
        for k in range(len(bounds) - 1):
            lo, hi = bounds[k], bounds[k + 1]
            if hi - lo < min_cluster_points:
                continue
            s0, s1 = proj_sorted[lo], proj_sorted[hi - 1]
            if s1 - s0 < 1e-6:
                continue
            segments.append(Segment2D(center + s0 * direction,
                                      center + s1 * direction))
        # absorb a wider band so noise tails cannot re-form phantom copies
        rel = remaining - center
        dist = np.abs(rel[:, 0] * direction[1] - rel[:, 1] * direction[0])
        remaining = remaining[dist > 2.0 * inlier_dist]
    if not segments:
        raise InsufficientPointsError("no wall-sized line found")
    return segments


def find_door_gaps(segments, min_width, angle_tol=math.radians(5.0),
                   offset_tol=0.15):
    """Maximal inlier-free intervals along collinear segment groups.

    Returns Gap records (index of the segment preceding the gap, gap center,
    gap width) for every interval at least `min_width` wide.
    """
    if min_width <= 0:
        raise ValueError("min_width must be > 0")
    n = len(segments)
    used = [False] * n
    gaps = []
    for i in range(n):
        if used[i]:
            continue
        group = [i]
        used[i] = True
        di = segments[i].direction
        for j in range(i + 1, n):
            if used[j]:
                continue
            dj = segments[j].direction
            if abs(di @ dj) < math.cos(angle_tol):
                continue
            rel = segments[j].midpoint - segments[i].p0
            perp = abs(rel[0] * di[1] - rel[1] * di[0])
            if perp <= offset_tol:
                group.append(j)
                used[j] = True
        if len(group) < 2:
            continue
        origin = segments[i].p0
        spans = []
        for j in group:
            a = (segments[j].p0 - origin) @ di
            b = (segments[j].p1 - origin) @ di
            spans.append((min(a, b), max(a, b), j))
        spans.sort()
        for k in range(len(spans) - 1):
            end_prev = spans[k][1]
            start_next = spans[k + 1][0]
            width = start_next - end_prev
            if width >= min_width:
                center = origin + di * (end_prev + width / 2.0)
                gaps.append(Gap(segment_index=spans[k][2], center=center,
                               width=float(width)))
    return gaps


@dataclass
class OccupancyGrid:
    resolution: float
    origin: Pose2D                 # world position of cell (0, 0) corner
    occupied: np.ndarray           # (ny, nx) uint8, after inflation
    raw: np.ndarray                # pre-inflation obstacle cells
    inflation_radius: float

    def world_to_cell(self, x, y):
        return (int(math.floor((x - self.origin.x) / self.resolution)),
                int(math.floor((y - self.origin.y) / self.resolution)))

    def cell_to_world(self, cx, cy):
        return (self.origin.x + (cx + 0.5) * self.resolution,
                self.origin.y + (cy + 0.5) * self.resolution)

    def in_bounds(self, cx, cy):
        return 0 <= cx < self.occupied.shape[1] and 0 <= cy < self.occupied.shape[0]

    def is_free(self, x, y):
        cx, cy = self.world_to_cell(x, y)
        return self.in_bounds(cx, cy) and not self.occupied[cy, cx]

    def to_pgm(self):
        """Portable graymap dump (P2): occupied 0, free 255."""
        ny, nx = self.occupied.shape
        lines = [f"P2", f"{nx} {ny}", "255"]
        for row in self.occupied[::-1]:
            lines.append(" ".join("0" if c else "255" for c in row))
        return "\n".join(lines) + "\n"


def build_occupancy_grid(segments, resolution=0.05, inflation=0.45,
                         pedestal_polygon=None, bounds=None, margin=1.0):
    """Rasterize wall segments (and an optional filled polygon) and inflate.

    `segments` accepts Segment2D or ((x0,y0),(x1,y1),...) tuples. Inflation
    must cover at least the robot's half-diagonal plus planning margin.
    """
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    segs = []
    for s in segments:
        if isinstance(s, Segment2D):
            segs.append((s.p0[0], s.p0[1], s.p1[0], s.p1[1]))
        else:
            segs.append((s[0][0], s[0][1], s[1][0], s[1][1]))
    pts = [(x0, y0) for x0, y0, _, _ in segs] + [(x1, y1) for _, _, x1, y1 in segs]
    if pedestal_polygon:
        pts += [tuple(p) for p in pedestal_polygon]
    if bounds is None:
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        pad = margin + inflation
        bounds = (min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad)
    x0, y0, x1, y1 = bounds
    nx = max(2, int(math.ceil((x1 - x0) / resolution)))
    ny = max(2, int(math.ceil((y1 - y0) / resolution)))
    raw = np.zeros((ny, nx), dtype=np.uint8)
    origin = Pose2D(x0, y0, 0.0)

    def mark(x, y):
        cx = int(math.floor((x - x0) / resolution))
        cy = int(math.floor((y - y0) / resolution))
        if 0 <= cx < nx and 0 <= cy < ny:
            raw[cy, cx] = 1

    for sx0, sy0, sx1, sy1 in segs:
        length = math.hypot(sx1 - sx0, sy1 - sy0)
        steps = max(1, int(math.ceil(length / (resolution * 0.5))))
        for k in range(steps + 1):
            f = k / steps
            mark(sx0 + f * (sx1 - sx0), sy0 + f * (sy1 - sy0))
    if pedestal_polygon:
        px = np.array([p[0] for p in pedestal_polygon])
        py = np.array([p[1] for p in pedestal_polygon])
        cmin_x = int(math.floor((px.min() - x0) / resolution))
        cmax_x = int(math.ceil((px.max() - x0) / resolution))
        cmin_y = int(math.floor((py.min() - y0) / resolution))
        cmax_y = int(math.ceil((py.max() - y0) / resolution))
        poly = list(zip(px, py))
        for cy in range(max(0, cmin_y), min(ny, cmax_y + 1)):
            for cx in range(max(0, cmin_x), min(nx, cmax_x + 1)):
                wx = x0 + (cx + 0.5) * resolution
                wy = y0 + (cy + 0.5) * resolution
                if _point_in_poly(wx, wy, poly):
                    raw[cy, cx] = 1

    occupied = _inflate(raw, int(math.ceil(inflation / resolution)))
    return OccupancyGrid(resolution=resolution, origin=origin,
                         occupied=occupied, raw=raw,
                         inflation_radius=inflation)


def _point_in_poly(x, y, poly):
    inside = False
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            if x < xi:
                inside = not inside
    return inside


def _inflate(raw, cells):
    if cells <= 0:
        return raw.copy()
    ny, nx = raw.shape
    out = raw.copy()
    for dy in range(-cells, cells + 1):
        for dx in range(-cells, cells + 1):
            if dx * dx + dy * dy > cells * cells or (dx == 0 and dy == 0):
                continue
            src_y = slice(max(0, -dy), min(ny, ny - dy))
            src_x = slice(max(0, -dx), min(nx, nx - dx))
            dst_y = slice(max(0, dy), min(ny, ny + dy))
            dst_x = slice(max(0, dx), min(nx, nx + dx))
            np.bitwise_or(out[dst_y, dst_x], raw[src_y, src_x],
                          out=out[dst_y, dst_x])
    return out


_MOVES = (
    (1, 0, 1, 0), (-1, 0, 1, 0), (0, 1, 1, 0), (0, -1, 1, 0),
    (1, 1, 0, 1), (1, -1, 0, 1), (-1, 1, 0, 1), (-1, -1, 0, 1),
)


def _search(grid, start_cell, goal_cell, use_heuristic):
    """8-connected grid search; cost tracked as (straight, diagonal) counts so
    A* and a Dijkstra oracle produce bit-identical float costs."""
    occ = grid.occupied
    ny, nx = occ.shape
    sx, sy = start_cell
    gx, gy = goal_cell

    def heuristic(cx, cy):
        dx, dy = abs(cx - gx), abs(cy - gy)
        return (dx - dy) + dy * SQRT2 if dx >= dy else (dy - dx) + dx * SQRT2

    g_counts = {start_cell: (0, 0)}
    parents = {start_cell: None}
    counter = 0
    h0 = heuristic(sx, sy) if use_heuristic else 0.0
    heap = [(h0, counter, start_cell)]
    closed = set()
    while heap:
        _, _, cell = heapq.heappop(heap)
        if cell in closed:
            continue
        closed.add(cell)
        if cell == goal_cell:
            ns, nd = g_counts[cell]
            path = []
            cur = cell
            while cur is not None:
                path.append(cur)
                cur = parents[cur]
            path.reverse()
            return path, ns + nd * SQRT2
        cx, cy = cell
        ns, nd = g_counts[cell]
        for dx, dy, ds_, dd_ in _MOVES:
            nxc, nyc = cx + dx, cy + dy
            if not (0 <= nxc < nx and 0 <= nyc < ny) or occ[nyc, nxc]:
                continue
            if ds_ == 0:   # forbid diagonal corner cutting
                if occ[cy, nxc] or occ[nyc, cx]:
                    continue
            cand = (ns + ds_, nd + dd_)
            ncell = (nxc, nyc)
            old = g_counts.get(ncell)
            if old is None or cand[0] + cand[1] * SQRT2 < old[0] + old[1] * SQRT2:
                g_counts[ncell] = cand
                parents[ncell] = cell
                counter += 1
                g = cand[0] + cand[1] * SQRT2
                f = g + (heuristic(nxc, nyc) if use_heuristic else 0.0)
                heapq.heappush(heap, (f, counter, ncell))
    raise NoPathError(f"no path from {start_cell} to {goal_cell}")


def plan_path(grid, start, goal, decimate_spacing=0.25):
    """A* on the inflated grid; waypoints decimated to >= decimate_spacing.

    start/goal are Pose2D (headings ignored for search). Raises
    GoalOccupiedError / NoPathError.
    """
    s_cell = grid.world_to_cell(start.x, start.y)
    g_cell = grid.world_to_cell(goal.x, goal.y)
    if not grid.in_bounds(*s_cell) or grid.occupied[s_cell[1], s_cell[0]]:
        raise ValueError("start pose is not in free space")
    if not grid.in_bounds(*g_cell) or grid.occupied[g_cell[1], g_cell[0]]:
        raise GoalOccupiedError(f"goal cell {g_cell} is occupied")
    if s_cell == g_cell:
        return [Pose2D(start.x, start.y, start.heading)]
    cells, _ = _search(grid, s_cell, g_cell, use_heuristic=True)
    pts = [grid.cell_to_world(cx, cy) for cx, cy in cells]
    keep = [pts[0]]
    for p in pts[1:-1]:
        if math.hypot(p[0] - keep[-1][0], p[1] - keep[-1][1]) >= decimate_spacing:
            keep.append(p)
    keep.append(pts[-1])
    poses = []
    for i, p in enumerate(keep):
        nxt = keep[min(i + 1, len(keep) - 1)]
        prev = keep[max(i - 1, 0)]
        heading = math.atan2(nxt[1] - prev[1], nxt[0] - prev[0])
        poses.append(Pose2D(p[0], p[1], heading))
    return poses


def dijkstra_cost(grid, start, goal):
    """Oracle: uniform-cost search cost between world poses (tests only)."""
    s_cell = grid.world_to_cell(start.x, start.y)
    g_cell = grid.world_to_cell(goal.x, goal.y)
    _, cost = _search(grid, s_cell, g_cell, use_heuristic=False)
    return cost


def astar_cost(grid, start, goal):
    s_cell = grid.world_to_cell(start.x, start.y)
    g_cell = grid.world_to_cell(goal.x, goal.y)
    _, cost = _search(grid, s_cell, g_cell, use_heuristic=True)
    return cost


def _loop_ccw(polygon):
    pts = [np.asarray(p, dtype=float) for p in polygon]
    area = 0.0
    for i in range(len(pts)):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % len(pts)]
        area += x0 * y1 - x1 * y0
    if area < 0:
        pts.reverse()
    return pts


def inset_polygon(polygon, inset):
    """Inset a convex polygon by a distance; raises if it degenerates."""
    pts = _loop_ccw(polygon)
    n = len(pts)
    lines = []
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        d = b - a
        d = d / np.linalg.norm(d)
        inward = np.array([-d[1], d[0]])       # interior is left of a CCW edge
        lines.append((a + inward * inset, d))
    out = []
    for i in range(n):
        (p1, d1) = lines[(i - 1) % n]
        (p2, d2) = lines[i]
        denom = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(denom) < 1e-12:
            raise StandoffInfeasibleError("parallel consecutive edges")
        t = ((p2 - p1)[0] * d2[1] - (p2 - p1)[1] * d2[0]) / denom
        out.append(p1 + t * d1)
    area = 0.0
    for i in range(n):
        x0, y0 = out[i]
        x1, y1 = out[(i + 1) % n]
        area += x0 * y1 - x1 * y0
    if area <= 0:
        raise StandoffInfeasibleError(f"inset {inset} m collapses the loop")
    return out


def generate_wall_following_waypoints(polygon, standoff, camera_side="left",
                                      spacing=0.5, context="indoor_search"):
    """Search-loop poses at `standoff` from each wall of a convex room.

    The loop runs clockwise when the end-effector camera faces left (outer
    walls on the left-hand side), counter-clockwise for a right-facing
    camera; headings are tangent to the loop so the camera sweeps the walls.
    The loop closes on its first waypoint.
    """
    if standoff <= 0:
        raise ValueError("standoff must be > 0")
    loop = inset_polygon(polygon, standoff)      # CCW
    if camera_side == "left":
        loop = loop[::-1]                        # clockwise travel, wall on left
    pts = []
    n = len(loop)
    for i in range(n):
        a, b = loop[i], loop[(i + 1) % n]
        seg_len = float(np.linalg.norm(b - a))
        d = (b - a) / seg_len
        steps = max(1, int(math.floor(seg_len / spacing)))
        for k in range(steps):
            pts.append(a + d * (k * (seg_len / steps)))
    poses = []
    m = len(pts)
    for i in range(m):
        nxt = pts[(i + 1) % m]
        heading = math.atan2(nxt[1] - pts[i][1], nxt[0] - pts[i][0])
        poses.append(Pose2D(pts[i][0], pts[i][1], heading))
    poses.append(poses[0].copy())
    return WaypointList(poses=poses, contexts=[context] * len(poses))


def nearest_path_index(pose, poses, start_index=0):
    best_i, best_d = start_index, float("inf")
    for i in range(start_index, len(poses)):
        d = math.hypot(poses[i].x - pose.x, poses[i].y - pose.y)
        if d < best_d:
            best_i, best_d = i, d
    return best_i


def pure_pursuit_step(est_pose, path, lookahead, speed_cap, min_index=0):
    """One pure-pursuit control step toward the path.

    Returns (v, omega, progress_index). The lookahead point is the first
    path point at least `lookahead` ahead of the nearest path point; the
    angular rate follows omega = 2 v sin(alpha) / L. Large bearing errors
    slow the linear speed so the robot pivots instead of ballooning off
    the path.
    """
    if not path:
        raise ValueError("path must be non-empty")
    n = len(path)
    best_i, best_d = min_index, float("inf")
    # progress is monotone along the path, so a bounded window suffices
    for i in range(min_index, min(n, min_index + 40)):
        d = math.hypot(path[i].x - est_pose.x, path[i].y - est_pose.y)
        if d < best_d:
            best_i, best_d = i, d
    target = path[-1]
    for i in range(best_i, n):
        d = math.hypot(path[i].x - est_pose.x, path[i].y - est_pose.y)
        if d >= lookahead:
            target = path[i]
            break
    dist = math.hypot(target.x - est_pose.x, target.y - est_pose.y)
    if dist < 1e-9:
        return 0.0, 0.0, best_i
    bearing = math.atan2(target.y - est_pose.y, target.x - est_pose.x)
    alpha = normalize_angle(bearing - est_pose.heading)
    v = speed_cap
    if abs(alpha) > math.pi / 3.0:
        v = 0.15 * speed_cap
    effective_l = max(lookahead, dist)
    omega = 2.0 * v * math.sin(alpha) / effective_l
    return v, omega, best_i


def goal_reached(pose, goal, tol=0.15):
    return math.hypot(goal.x - pose.x, goal.y - pose.y) <= tol
