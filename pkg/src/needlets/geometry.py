"""Points, caps, maximal epsilon-nets and Voronoi tessellations on the unit sphere.

All angles are in radians, all areas in steradians. Point sets are stored as
(n, 3) float arrays of unit vectors; separation and covering radii are
geodesic (arc length) distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError

# Tolerance on inner products when comparing angles / breaking Voronoi ties.
INNER_PRODUCT_TOL = 1e-12
# A vector counts as "unit" for distance computations if |norm - 1| <= this.
UNIT_NORM_TOL = 1e-9

_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
_CANDIDATE_BATCH = 4096
_PROBE_BATCH = 100_000


@dataclass(frozen=True)
class UnitPoint:
    """A point on the unit sphere, stored as a 3-vector of unit norm."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        n2 = self.x * self.x + self.y * self.y + self.z * self.z
        if abs(n2 - 1.0) > 1e-12:
            raise ValidationError(f"not a unit vector: |p|^2 = {n2!r}")

    @classmethod
    def from_vector(cls, v, normalize: bool = False) -> "UnitPoint":
        v = np.asarray(v, dtype=float)
        if v.shape != (3,):
            raise ValidationError(f"expected a 3-vector, got shape {v.shape}")
        if normalize:
            n = float(np.linalg.norm(v))
            if n == 0.0:
                raise ValidationError("cannot normalize the zero vector")
            v = v / n
        return cls(float(v[0]), float(v[1]), float(v[2]))

    @classmethod
    def from_angles(cls, colatitude: float, longitude: float) -> "UnitPoint":
        st = math.sin(colatitude)
        return cls(st * math.cos(longitude), st * math.sin(longitude),
                   math.cos(colatitude))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def colatitude(self) -> float:
        return math.acos(min(1.0, max(-1.0, self.z)))

    @property
    def longitude(self) -> float:
        return math.atan2(self.y, self.x) % (2.0 * math.pi)


NORTH_POLE = UnitPoint(0.0, 0.0, 1.0)
SOUTH_POLE = UnitPoint(0.0, 0.0, -1.0)


def as_unit_vector(p, tol: float = UNIT_NORM_TOL) -> np.ndarray:
    """Coerce a UnitPoint or 3-sequence to a validated unit 3-vector."""
    if isinstance(p, UnitPoint):
        return p.vector
    v = np.asarray(p, dtype=float)
    if v.shape != (3,):
        raise ValidationError(f"expected a 3-vector, got shape {v.shape}")
    n = float(np.linalg.norm(v))
    if abs(n - 1.0) > tol:
        raise ValidationError(f"vector norm {n!r} deviates from 1 by more than {tol}")
    return v


def geodesic_distance(a, b) -> float:
    """Arc-length distance arccos(<a, b>) between two unit vectors, in [0, pi]."""
    va = as_unit_vector(a)
    vb = as_unit_vector(b)
    dot = float(np.dot(va, vb))
    return math.acos(min(1.0, max(-1.0, dot)))


def cap_area(eta: float) -> float:
    """Area 2*pi*(1 - cos(eta)) of a spherical cap of angular radius eta in (0, pi]."""
    if not 0.0 < eta <= math.pi:
        raise ValidationError(f"cap radius must lie in (0, pi], got {eta!r}")
    return 4.0 * math.pi * math.sin(0.5 * eta) ** 2


def annulus_area(mu: float, eta: float) -> float:
    """Area 2*pi*(cos(mu) - cos(eta)) of the annulus between radii mu < eta."""
    if not 0.0 <= mu < eta or eta > math.pi:
        raise ValidationError(f"need 0 <= mu < eta <= pi, got mu={mu!r}, eta={eta!r}")
    # product-of-sines form is stable for thin annuli
    return 4.0 * math.pi * math.sin(0.5 * (eta - mu)) * math.sin(0.5 * (eta + mu))


def random_unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n points uniformly on the sphere (normalized Gaussian triples)."""
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


@dataclass(frozen=True)
class MaximalNet:
    """A maximal epsilon-net: pairwise separation > epsilon, covering radius <= epsilon.

    Construction validates unit norms and pairwise separation. Covering is a
    property of how the net was built (see build_maximal_net) and can be
    re-checked with covering_radius().
    """

    epsilon: float
    points: np.ndarray
    seed: int | None = None
    strategy: str = "explicit"
    _tree: cKDTree = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.epsilon <= math.pi:
            raise ValidationError(f"epsilon must lie in (0, pi], got {self.epsilon!r}")
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
            raise ValidationError(f"points must be a nonempty (n, 3) array, got {pts.shape}")
        norms = np.linalg.norm(pts, axis=1)
        if np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOL:
            raise ValidationError("net points must be unit vectors")
        _check_separation(pts, self.epsilon)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "_tree", cKDTree(pts))

    def __len__(self) -> int:
        return len(self.points)

    def center(self, i: int) -> UnitPoint:
        return UnitPoint.from_vector(self.points[i])

    def nearest_distances(self, xyz: np.ndarray) -> np.ndarray:
        """Geodesic distance from each query point to the net."""
        chord, _ = self._tree.query(np.atleast_2d(xyz))
        return 2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0))

    def covering_radius(self, n_probes: int = 100_000, seed: int = 0) -> float:
        """Largest probe-to-net distance over uniformly sampled probe points."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        remaining = n_probes
        while remaining > 0:
            m = min(remaining, _PROBE_BATCH)
            worst = max(worst, float(np.max(self.nearest_distances(
                random_unit_vectors(rng, m)))))
            remaining -= m
        return worst


def _check_separation(pts: np.ndarray, epsilon: float, chunk: int = 2048) -> None:
    n = len(pts)
    if n < 2:
        return
    limit = math.cos(epsilon) + INNER_PRODUCT_TOL
    for start in range(0, n, chunk):
        block = pts[start:start + chunk]
        dots = block @ pts.T
        rows = np.arange(start, min(start + chunk, n))
        dots[np.arange(len(rows)), rows] = -1.0  # mask self-pairs
        worst = float(np.max(dots))
        if worst > limit:
            raise ValidationError(
                f"separation violated: max off-diagonal inner product {worst!r} "
                f"exceeds cos(epsilon) = {math.cos(epsilon)!r}")


def _accept_separated(candidates: np.ndarray, accepted: list[np.ndarray],
                      cos_margin: float, streak: int, streak_target) -> tuple[int, bool]:
    """Greedy sequential acceptance of candidates at separation > epsilon.

    Mutates `accepted`. Returns the updated rejection streak and whether the
    streak target was reached. Candidates already too close to the existing
    points are counted as rejections in bulk; only survivors of that screen
    are walked one by one (they also have to clear points accepted earlier in
    the same batch, preserving the sequential semantics).
    """
    base = np.array(accepted) if accepted else np.empty((0, 3))
    ok_existing = (np.ones(len(candidates), dtype=bool) if len(base) == 0
                   else np.all(candidates @ base.T < cos_margin, axis=1))
    survivors = np.nonzero(ok_existing)[0]
    fresh: list[np.ndarray] = []
    pos = 0
    for i in survivors:
        streak += int(i) - pos
        pos = int(i)
        if streak >= streak_target(len(accepted)):
            return streak, True
        cand = candidates[pos]
        good = not fresh or bool(np.all(np.asarray(fresh) @ cand < cos_margin))
        if good:
            accepted.append(cand)
            fresh.append(cand)
            streak = 0
        else:
            streak += 1
        pos += 1
    streak += len(candidates) - pos
    return streak, streak >= streak_target(len(accepted))


def _saturate_random(accepted: list[np.ndarray], epsilon: float,
                     rng: np.random.Generator) -> None:
    """Rejection-sample uniform candidates until a long rejection streak.

    The streak target max(1e4, 100 * current size) declares (approximate)
    maximality; covering is then enforced separately.
    """
    cos_margin = math.cos(epsilon) - INNER_PRODUCT_TOL
    target = lambda n: max(10_000, 100 * n)
    streak = 0
    while True:
        cand = random_unit_vectors(rng, _CANDIDATE_BATCH)
        streak, done = _accept_separated(cand, accepted, cos_margin, streak, target)
        if done:
            return


def _circumcenters(pts: np.ndarray, triples: np.ndarray) -> np.ndarray:
    """Both spherical circumcenters (2 per triple) of point triples."""
    a, b, c = pts[triples[:, 0]], pts[triples[:, 1]], pts[triples[:, 2]]
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    keep = norm[:, 0] > 1e-14  # degenerate (collinear) triples carry no vertex
    n = n[keep] / norm[keep]
    return np.concatenate([n, -n])


def _fill_vertex_gaps(accepted: list[np.ndarray], epsilon: float) -> None:
    """Insert Voronoi-vertex candidates left uncovered by the current points.

    The covering radius of a point set is attained at vertices of its Voronoi
    diagram (circumcenters of triples of nearby points), except for degenerate
    tiny nets which the probe rounds handle. Iterating until no circumcenter
    is farther than epsilon removes the sliver gaps that random probing is
    slow to find.
    """
    cos_margin = math.cos(epsilon) - INNER_PRODUCT_TOL
    while len(accepted) >= 4:
        pts = np.asarray(accepted)
        tree = cKDTree(pts)
        # triples of mutually close points; 2.5 eps slack covers moderately
        # violated vertices, larger gaps are found by the probe rounds
        radius = 2.0 * math.sin(min(1.25 * epsilon, 0.5 * math.pi))
        pairs = tree.query_pairs(radius, output_type="ndarray")
        if len(pairs) == 0:
            return
        by_center: dict[int, list[int]] = {}
        for i, j in pairs:
            by_center.setdefault(int(i), []).append(int(j))
        triples = [(i, js[p], js[q])
                   for i, js in by_center.items()
                   for p in range(len(js)) for q in range(p + 1, len(js))]
        if not triples:
            return
        centers = _circumcenters(pts, np.asarray(triples))
        if len(centers) == 0:
            return
        chord, _ = tree.query(centers)
        gaps = centers[chord > 2.0 * math.sin(0.5 * epsilon) + 1e-12]
        if len(gaps) == 0:
            return
        order = np.lexsort(gaps.T)  # deterministic insertion order
        _accept_separated(gaps[order], accepted, cos_margin, 0, lambda n: np.inf)


def _fill_covering_gaps(accepted: list[np.ndarray], epsilon: float,
                        rng: np.random.Generator, resume_sampling: bool) -> None:
    """Probe with uniform points and insert any probe farther than epsilon.

    Terminates when a full probe round of 1e5 points shows no violation, which
    together with the vertex pass makes the covering invariant hold by
    construction.
    """
    cos_margin = math.cos(epsilon) - INNER_PRODUCT_TOL
    _fill_vertex_gaps(accepted, epsilon)
    while True:
        probes = random_unit_vectors(rng, _PROBE_BATCH)
        tree = cKDTree(np.asarray(accepted))
        chord, _ = tree.query(probes)
        # violation: strictly farther than epsilon (chord > 2 sin(eps/2))
        viol = probes[chord > 2.0 * math.sin(0.5 * epsilon) + 1e-12]
        if len(viol) == 0:
            return
        _accept_separated(viol, accepted, cos_margin, 0, lambda n: np.inf)
        if resume_sampling:
            _saturate_random(accepted, epsilon, rng)
        _fill_vertex_gaps(accepted, epsilon)


def _fibonacci_spiral(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
    phi = _GOLDEN_ANGLE * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def build_maximal_net(epsilon: float, strategy: str = "greedy_random",
                      seed: int = 0) -> MaximalNet:
    """Generate a maximal epsilon-net, deterministically in (epsilon, strategy, seed).

    greedy_random: rejection-sample uniform candidates, accepting any at
    distance > epsilon from all accepted points, until a rejection streak of
    max(1e4, 100 N) declares saturation; covering is then verified with 1e5
    uniform probes per round, inserting violators and resuming sampling until
    a clean round.

    spiral_thinned: thin a deterministic Fibonacci spiral (spacing ~ 0.7 eps)
    to separation > epsilon, then fill covering gaps by probing, which is both
    faster and more regular for small epsilon.
    """
    if not 0.0 < epsilon <= math.pi:
        raise ValidationError(f"epsilon must lie in (0, pi], got {epsilon!r}")
    rng = np.random.default_rng(seed)
    accepted: list[np.ndarray] = []
    if strategy == "greedy_random":
        _saturate_random(accepted, epsilon, rng)
        _fill_covering_gaps(accepted, epsilon, rng, resume_sampling=True)
    elif strategy == "spiral_thinned":
        n_spiral = max(8, int(math.ceil(14.8 / epsilon ** 2)))
        cos_margin = math.cos(epsilon) - INNER_PRODUCT_TOL
        spiral = _fibonacci_spiral(n_spiral)
        for start in range(0, n_spiral, _CANDIDATE_BATCH):
            _accept_separated(spiral[start:start + _CANDIDATE_BATCH], accepted,
                              cos_margin, 0, lambda n: np.inf)
        _fill_covering_gaps(accepted, epsilon, rng, resume_sampling=False)
    else:
        raise ValidationError(f"unknown strategy {strategy!r}")
    return MaximalNet(epsilon=epsilon, points=np.asarray(accepted), seed=seed,
                      strategy=strategy)


def _nearest_center(points: np.ndarray, xyz: np.ndarray) -> np.ndarray:
    """Index of the nearest center for each row of xyz, ties to the lowest index.

    A tie is any center whose inner product is within INNER_PRODUCT_TOL of the
    best one.
    """
    xyz = np.atleast_2d(xyz)
    out = np.empty(len(xyz), dtype=np.int64)
    chunk = max(1, 8_000_000 // max(1, len(points)))
    for start in range(0, len(xyz), chunk):
        dots = xyz[start:start + chunk] @ points.T
        best = dots.max(axis=1, keepdims=True)
        out[start:start + len(dots)] = np.argmax(dots >= best - INNER_PRODUCT_TOL,
                                                 axis=1)
    return out


def voronoi_assign(net: MaximalNet, p) -> int:
    """Index of the net center closest to p; exact ties go to the lowest index."""
    v = as_unit_vector(p)
    return int(_nearest_center(net.points, v[None, :])[0])


@dataclass(frozen=True)
class VoronoiTessellation:
    """Assignment of a fine net's points to the Voronoi cells of a coarse net."""

    net: MaximalNet
    assignment: np.ndarray
    cell_counts: np.ndarray

    def __post_init__(self):
        self.assignment.setflags(write=False)
        self.cell_counts.setflags(write=False)

    @property
    def memberships(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.searchsorted(self.assignment[order], np.arange(len(self.net) + 1))
        return [order[bounds[i]:bounds[i + 1]] for i in range(len(self.net))]


def cell_counts(coarse: MaximalNet, fine: MaximalNet) -> VoronoiTessellation:
    """Count fine-net points inside each Voronoi cell of the coarse net.

    The counts always partition Card(fine); the cardinality sandwich
    (delta/eps)^2 / (4 pi^2) <= N_a <= 2 pi^2 (delta/eps)^2 is only guaranteed
    when eps <= delta / 4.
    """
    assignment = _nearest_center(coarse.points, fine.points)
    counts = np.bincount(assignment, minlength=len(coarse))
    return VoronoiTessellation(net=coarse, assignment=assignment,
                               cell_counts=counts)


def adjacency(net: MaximalNet) -> list[tuple[int, int]]:
    """Pairs (i, j), i < j, of centers at distance <= 2 epsilon.

    Cells can only intersect for such pairs, and each center has at most
    6 pi^2 (hence 59) of them.
    """
    pts = net.points
    n = len(pts)
    two_eps = 2.0 * net.epsilon
    if two_eps >= math.pi:
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    limit = math.cos(two_eps) - INNER_PRODUCT_TOL
    pairs: list[tuple[int, int]] = []
    chunk = 2048
    for start in range(0, n, chunk):
        dots = pts[start:start + chunk] @ pts.T
        rows, cols = np.nonzero(dots >= limit)
        for r, c in zip(rows + start, cols):
            if r < c:
                pairs.append((int(r), int(c)))
    return pairs


def neighbor_counts(net: MaximalNet) -> np.ndarray:
    """Number of 2-epsilon neighbors of each center."""
    counts = np.zeros(len(net), dtype=np.int64)
    for i, j in adjacency(net):
        counts[i] += 1
        counts[j] += 1
    return counts


def save_net(net: MaximalNet, path) -> None:
    """Write a net as text: header 'epsilon N seed strategy', then x y z rows."""
    with open(path, "w", encoding="ascii") as fh:
        seed = "none" if net.seed is None else str(net.seed)
        fh.write(f"{net.epsilon:.17g} {len(net)} {seed} {net.strategy}\n")
        for p in net.points:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


def load_net(path) -> MaximalNet:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise ValidationError(f"malformed net header: {header!r}")
        epsilon = float(header[0])
        n = int(header[1])
        seed = None if header[2] == "none" else int(header[2])
        strategy = header[3]
        pts = np.loadtxt(fh, dtype=float, ndmin=2)
    if pts.shape != (n, 3):
        raise ValidationError(f"expected {n} points, found array of shape {pts.shape}")
    return MaximalNet(epsilon=epsilon, points=pts, seed=seed, strategy=strategy)
