"""Euclidean wandering balls along a translation orbit of the k-torus.

Ball ``j`` (``-J <= j <= J``) is centred at ``seed + j * theta`` with radius
``c_r / (1 + |j|)^p``, after a greedy repair that makes the family pairwise
disjoint and a uniform rescale that enforces the volume budget.  The model
dynamics sends ball ``j`` onto ball ``j + 1`` by a similarity; collapsing each
ball to its centre semiconjugates it to the translation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .dynamics import ModelMap, orbit_points, reduce_mod1, torus_delta
from .errors import (
    InfeasibleWindow,
    NotDisjoint,
    NotInSystem,
    OutsideBall,
    RationalOrbit,
    WindowEdge,
)

CLEARANCE = 1e-6
MIN_RADIUS = 1e-12
FORMAT_VERSION = 1


def ball_volume(r, k):
    """Lebesgue volume ``pi^(k/2) r^k / Gamma(k/2 + 1)``."""
    return np.exp(0.5 * k * math.log(math.pi) - gammaln(0.5 * k + 1.0)) * np.asarray(r, dtype=float) ** k


@dataclass(frozen=True, eq=False)
class BallSystem:
    k: int
    theta: np.ndarray
    J: int
    centers: np.ndarray
    radii: np.ndarray
    budget: float
    repair_log: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("theta", "centers", "radii"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def indices(self):
        return np.arange(-self.J, self.J + 1)

    def pos(self, j):
        """Array row of ball ``j``."""
        if not -self.J <= j <= self.J:
            raise WindowEdge(f"ball index {j} outside window [-{self.J}, {self.J}]")
        return j + self.J

    def center(self, j):
        return self.centers[self.pos(j)]

    def radius(self, j):
        return float(self.radii[self.pos(j)])

    def volumes(self):
        return ball_volume(self.radii, self.k)

    def locate(self, x):
        """Index of the closed ball containing each point; ``J + 1`` marks points outside every ball."""
        x = reduce_mod1(np.asarray(x, dtype=float))
        flat = x.reshape(-1, self.k)
        out = np.full(flat.shape[0], self.J + 1, dtype=int)
        for start in range(0, flat.shape[0], 256):
            chunk = flat[start : start + 256]
            d = np.linalg.norm(torus_delta(chunk[:, None, :], self.centers[None, :, :]), axis=-1)
            hit = d <= self.radii[None, :]
            any_hit = hit.any(axis=1)
            out[start : start + 256] = np.where(any_hit, np.argmax(hit, axis=1) - self.J, self.J + 1)
        return out.reshape(x.shape[:-1])

    def disjointness_margin(self):
        """Smallest ``d_ij - r_i - r_j - CLEARANCE * min(r_i, r_j)`` over pairs (``inf`` for one ball)."""
        return _pairwise_margin(self.centers, self.radii)

    def is_disjoint(self):
        """Disjointness certificate; reuses the one recorded at build time when present."""
        margin = self.metadata.get("disjointness_margin")
        if margin is None:
            margin = self.disjointness_margin()
        return margin >= 0.0

    # serialization ---------------------------------------------------------

    def to_records(self):
        """Header line, then one line each for ``centers``, ``radii`` and ``repair_log``."""
        yield {
            "record": "ballsystem",
            "version": FORMAT_VERSION,
            "k": self.k,
            "theta": self.theta.tolist(),
            "J": self.J,
            "budget": self.budget,
            "metadata": self.metadata,
        }
        yield {"record": "centers", "centers": self.centers.tolist()}
        yield {"record": "radii", "radii": self.radii.tolist()}
        yield {"record": "repair_log", "repair_log": self.repair_log}

    def dump(self, path):
        # json writes floats with repr, so the round trip is bit-exact
        with open(path, "w") as fh:
            for rec in self.to_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            recs = {}
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    recs[rec.get("record")] = rec
        head = recs.get("ballsystem")
        if head is None:
            raise ValueError("not a ball-system record file")
        if head["version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported ball-system format version {head['version']}")
        return cls(
            k=head["k"],
            theta=np.array(head["theta"]),
            J=head["J"],
            centers=np.array(recs["centers"]["centers"]).reshape(-1, head["k"]),
            radii=np.array(recs["radii"]["radii"]),
            budget=head["budget"],
            repair_log=recs.get("repair_log", {}).get("repair_log", []),
            metadata=head.get("metadata", {}),
        )


def _pairwise_margin(centers, radii):
    n = len(radii)
    worst = math.inf
    for i in range(n - 1):
        d = np.linalg.norm(torus_delta(centers[i], centers[i + 1 :]), axis=-1)
        r = radii[i + 1 :]
        m = d - radii[i] - r - CLEARANCE * np.minimum(radii[i], r)
        worst = min(worst, float(m.min()))
    return worst


def _clear(d, a, b):
    """Clearance test in both summation orders, exactly as the certificate evaluates it."""
    c = CLEARANCE * min(a, b)
    return d - a - b - c >= 0.0 and d - b - a - c >= 0.0


def _resolve_pair(d, r_old, r_new):
    """Shrink a conflicting pair; returns the new ``(r_old, r_new)``.

    The larger radius is the offender (the newcomer on ties) and is cut to the
    largest value that restores clearance with the other held fixed.  When the
    smaller ball alone already reaches the other centre, both are cut to
    ``d / (2 + CLEARANCE)``.
    """
    newcomer_offends = r_new >= r_old
    big, small = (r_new, r_old) if newcomer_offends else (r_old, r_new)
    if d > small * (1.0 + CLEARANCE):
        cand = d - small * (1.0 + CLEARANCE)
        if cand < small:
            cand = (d - small) / (1.0 + CLEARANCE)
        big = min(big, cand)
    else:
        both = d / (2.0 + CLEARANCE)
        big = min(big, both)
        small = min(small, both)
    while not _clear(d, big, small):
        big = math.nextafter(big, 0.0)
        if small > big:
            small = math.nextafter(small, 0.0)
    return (small, big) if newcomer_offends else (big, small)


def build_ball_system(theta, J, c_r=0.05, p=0.8, v_max=0.5, seed_point=None):
    """Place radii ``c_r / (1 + |j|)^p`` on the theta-orbit and repair to disjointness.

    Balls are admitted in order ``0, -1, 1, -2, 2, ...``; each conflict with an
    already admitted ball is resolved by :func:`_resolve_pair` and logged.  If
    the total volume then exceeds ``v_max`` all radii are scaled uniformly.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    k = theta.size
    if k < 2:
        raise ValueError("ball systems need k >= 2")
    if J < 0:
        raise ValueError("J must be non-negative")
    if c_r <= 0 or v_max <= 0:
        raise ValueError("c_r and v_max must be positive")
    seed_point = np.full(k, 0.5) if seed_point is None else np.asarray(seed_point, dtype=float)
    idx = np.arange(-J, J + 1)
    centers = orbit_points(theta, idx, seed=seed_point)
    radii = c_r / (1.0 + np.abs(idx)) ** p
    log = []
    order = sorted(range(idx.size), key=lambda i: (abs(idx[i]), idx[i]))
    admitted = []
    for pos in order:
        if admitted:
            adm = np.array(admitted)
            d = np.linalg.norm(torus_delta(centers[pos], centers[adm]), axis=-1)
            if d.min() < 1e-12:
                other = idx[adm[np.argmin(d)]]
                raise RationalOrbit(f"centres of balls {other} and {idx[pos]} coincide")
            slack = d - radii[adm] - radii[pos] - CLEARANCE * np.minimum(radii[adm], radii[pos])
            conflict = slack < 1e-15
            for a, dd in zip(adm[conflict], d[conflict]):
                r_a, r_p = radii[a], radii[pos]
                # an earlier repair in this loop may already have cleared the pair
                if _clear(float(dd), float(r_a), float(r_p)):
                    continue
                new_a, new_p = _resolve_pair(float(dd), float(r_a), float(r_p))
                for which, old, new in ((a, r_a, new_a), (pos, r_p, new_p)):
                    if new != old:
                        log.append(
                            {
                                "step": "disjoint",
                                "ball": int(idx[which]),
                                "against": int(idx[pos] if which == a else idx[a]),
                                "old": float(old),
                                "new": float(new),
                                "factor": float(new / old),
                            }
                        )
                radii[a], radii[pos] = new_a, new_p
                if min(new_a, new_p) < MIN_RADIUS:
                    raise InfeasibleWindow(
                        f"radius of ball {idx[a] if new_a < new_p else idx[pos]} fell below {MIN_RADIUS}"
                    )
        admitted.append(pos)
    total = float(np.sum(ball_volume(radii, k)))
    if total > v_max:
        factor = (v_max / total) ** (1.0 / k)
        radii *= factor
        log.append({"step": "budget", "ball": None, "against": None, "old": total, "new": v_max, "factor": factor})
        if radii.min() < MIN_RADIUS:
            raise InfeasibleWindow("budget rescale pushed a radius below 1e-12")
    margin = _pairwise_margin(centers, radii)
    if margin < 0.0:
        raise InfeasibleWindow(f"repair left a pair overlapping (margin {margin!r})")
    meta = {
        "disjointness_margin": margin,
        "c_r": c_r,
        "p": p,
        "seed_point": seed_point.tolist(),
        "summable": bool(p * k > 1),
        "shrinks": sum(1 for e in log if e["step"] == "disjoint"),
    }
    return BallSystem(k=k, theta=theta, J=J, centers=centers, radii=radii, budget=float(v_max), repair_log=log, metadata=meta)


# ---------------------------------------------------------------------------
# dynamics on the balls


@dataclass(frozen=True)
class AffineMap:
    """``x -> linear @ x + offset`` on lift coordinates."""

    linear: np.ndarray
    offset: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.linear.T + self.offset

    def compose(self, inner):
        """``self o inner``."""
        return AffineMap(self.linear @ inner.linear, self.linear @ inner.offset + self.offset)

    def fixed_point(self):
        """Solve ``(I - A) p = b``."""
        k = self.linear.shape[0]
        return np.linalg.solve(np.eye(k) - self.linear, self.offset)


class SimilarityDynamics(ModelMap):
    """Ball-wise similarities ``g_j(x) = c_{j+1} + (r_{j+1} / r_j)(x - c_j)``.

    Only defined on the balls ``B_j`` with ``j < J``; everywhere else the
    fragment raises :class:`NotInSystem` (or :class:`WindowEdge` on ``B_J``).
    The image centre is lifted to ``c_j + theta`` so no wrap occurs.
    """

    def __init__(self, system, rotations=None):
        self.system = system
        self.k = system.k
        self.rotations = rotations
        self.description = f"similarity dynamics on {2 * system.J + 1} balls"

    def ratio(self, j):
        S = self.system
        if j >= S.J:
            raise WindowEdge(f"ball {j} is the last in the window")
        return S.radius(j + 1) / S.radius(j)

    def rotation(self, j):
        if self.rotations is None:
            return np.eye(self.k)
        return self.rotations[self.system.pos(j)]

    def step_map(self, j, base=None):
        """Affine similarity carrying ``B_j`` onto ``B_{j+1}`` in lift coordinates.

        ``base`` is the lift of ``c_j`` to build around (default: ``c_j`` in
        [0, 1)^k); the image centre is ``base + delta(c_j, c_{j+1})``.
        """
        S = self.system
        rho = self.ratio(j)
        c = S.center(j) if base is None else np.asarray(base, dtype=float)
        target = c + torus_delta(S.center(j), S.center(j + 1))
        A = rho * self.rotation(j)
        return AffineMap(A, target - A @ c)

    def chains(self, j0, n_max):
        """Yield ``g_{j0+n-1} o ... o g_{j0}`` for ``n = 1..n_max``.

        Each factor is built around the lifted centre reached so far; building
        them around the reduced centres would scale the integer wrap offsets.
        """
        g = AffineMap(np.eye(self.k), np.zeros(self.k))
        base = self.system.center(j0)
        for j in range(j0, j0 + n_max):
            step = self.step_map(j, base)
            g = step.compose(g)
            base = step(base)
            yield g

    def chain(self, j0, n):
        """``g_{j0+n-1} o ... o g_{j0}`` as one affine map on lift coordinates."""
        if n == 0:
            return AffineMap(np.eye(self.k), np.zeros(self.k))
        for g in self.chains(j0, n):
            pass
        return g

    def _indices(self, x):
        j = self.system.locate(x)
        if np.any(j == self.system.J + 1):
            raise NotInSystem("point lies outside every ball")
        if np.any(j == self.system.J):
            raise WindowEdge(f"point lies in the last ball B_{self.system.J}")
        return j

    def eval_lift(self, x):
        x = np.asarray(x, dtype=float)
        fl = np.floor(x)
        u = x - fl
        js = np.atleast_1d(self._indices(u))
        flat = np.atleast_2d(u.reshape(-1, self.k))
        out = np.empty_like(flat)
        for i, (pt, j) in enumerate(zip(flat, js)):
            c = self.system.center(int(j))
            g = self.step_map(int(j))
            # move the point next to the centre the step map was built around
            out[i] = g(c + torus_delta(c, pt)) + (pt - (c + torus_delta(c, pt)))
        return fl + out.reshape(x.shape)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        js = np.atleast_1d(self._indices(x))
        mats = np.array([self.ratio(int(j)) * self.rotation(int(j)) for j in js])
        return mats.reshape(x.shape[:-1] + (self.k, self.k))


def similarity_map(system, rotations=None):
    return SimilarityDynamics(system, rotations)


def collapse(system):
    """Semiconjugacy to the translation: ball ``B_j`` collapses to its centre."""

    def phi(x):
        x = reduce_mod1(np.asarray(x, dtype=float))
        j = system.locate(x)
        inside = j != system.J + 1
        safe = np.where(inside, j + system.J, 0)
        return np.where(inside[..., None], system.centers[safe], x)

    return phi


def chord_half_length(x, center, radius):
    """Half the shortest chord through ``x`` of the ball, ``sqrt(r^2 - |x - c|^2)``."""
    rr = np.sum(torus_delta(center, x) ** 2, axis=-1)
    if np.any(rr > radius * radius * (1 + 1e-12)):
        raise OutsideBall("point lies outside the ball")
    return np.sqrt(np.maximum(radius * radius - rr, 0.0))


@dataclass(frozen=True, eq=False)
class DistortionProfile:
    """Nonconformal perturbation ``exp(eps_j (l / r_j)^m N)`` with flatness order ``m``."""

    order: int
    amplitudes: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        N = np.array(self.direction, dtype=float)
        if np.max(np.abs(N - N.T)) > 1e-12:
            raise ValueError("direction must be symmetric")
        if abs(np.trace(N)) > 1e-12:
            raise ValueError("direction must be traceless")
        if abs(np.linalg.norm(N) - 1.0) > 1e-12:
            raise ValueError("direction must have unit Frobenius norm")
        if self.order < 1:
            raise ValueError("flatness order must be positive")
        eps = np.array(self.amplitudes, dtype=float)
        for a in (N, eps):
            a.setflags(write=False)
        object.__setattr__(self, "direction", N)
        object.__setattr__(self, "amplitudes", eps)

    @classmethod
    def constant(cls, system, order, eps, direction=None):
        direction = default_direction(system.k) if direction is None else direction
        return cls(order, np.full(2 * system.J + 1, float(eps)), direction)

    def amplitude(self, system, j):
        return float(self.amplitudes[system.pos(j)])


def default_direction(k):
    """``diag(1, -1, 0, ...) / sqrt(2)``."""
    N = np.zeros((k, k))
    N[0, 0], N[1, 1] = 1.0, -1.0
    return N / math.sqrt(2.0)


def random_direction(k, rng):
    S = rng.standard_normal((k, k))
    S = 0.5 * (S + S.T)
    S -= np.trace(S) / k * np.eye(k)
    return S / np.linalg.norm(S)


def _sym_expm(S):
    w, V = np.linalg.eigh(S)
    return (V * np.exp(w)) @ V.T


class SyntheticJacobianField:
    """``A(x) = (r_{j+1}/r_j) exp(eps_j (l(x)/r_j)^m N)`` on ``B_j``; identity off the balls.

    The nonconformal part vanishes to order ``m`` in the chord half-length, so
    ``dist_to_base(A(x)) = 2 |eps_j| (l(x) / r_j)^m`` exactly.
    """

    def __init__(self, system, profile):
        self.system = system
        self.profile = profile
        self.k = system.k

    def at_ball(self, j, x):
        S = self.system
        if j >= S.J:
            raise WindowEdge(f"ball {j} is the last in the window")
        r = S.radius(j)
        ell = chord_half_length(x, S.center(j), r)
        s = self.profile.amplitude(S, j) * (ell / r) ** self.profile.order
        return (S.radius(j + 1) / r) * _sym_expm(s * self.profile.direction)

    def expected_distance(self, j, x):
        S = self.system
        r = S.radius(j)
        ell = chord_half_length(x, S.center(j), r)
        return 2.0 * abs(self.profile.amplitude(S, j)) * (ell / r) ** self.profile.order

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        j = int(self.system.locate(x))
        if j == self.system.J + 1:
            return np.eye(self.k)
        return self.at_ball(j, x)


def synthetic_jacobian_field(system, profile):
    return SyntheticJacobianField(system, profile)
