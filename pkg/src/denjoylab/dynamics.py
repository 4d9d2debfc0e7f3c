"""Maps of the k-torus, their lifts, orbits and derivative cocycles.

Points are numpy arrays whose last axis has length k; evaluators broadcast
over leading axes.  A :class:`ModelMap` is defined by its lift to R^k, which
must commute with integer translations; the torus map is the lift followed by
reduction mod 1.

The module also builds the classical Denjoy counterexample on the circle: the
orbit of a rotation is blown up into intervals ``I_n`` of length
``c / (1 + n^2)`` and the map carries ``I_n`` onto ``I_{n+1}`` by a smooth
bridge with unit derivative at both ends.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .confspace import dist_to_base
from .errors import BudgetExceeded, NonFinite, SingularMatrix, TailTooLarge


def reduce_mod1(x):
    """Reduce coordinates to [0, 1); guards against ``-tiny % 1 == 1.0``."""
    with np.errstate(invalid="ignore"):
        y = np.mod(x, 1.0)
    return np.where(y >= 1.0, 0.0, y)


def torus_delta(x, y):
    """Closest-representative displacement from ``x`` to ``y`` on the torus.

    Components lie in [-1/2, 1/2); an exact half-period tie resolves to -1/2.
    """
    d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    return d - np.floor(d + 0.5)


def torus_dist(x, y):
    return np.linalg.norm(torus_delta(x, y), axis=-1)


def frac_multiple(n, theta):
    """``{n * theta}`` for integer ``n``, computed exactly from the binary value of theta.

    A double is a dyadic rational ``m / 2^e``, so ``n * m mod 2^e`` is exact
    integer arithmetic; only the final division rounds.
    """
    m, d = float(theta).as_integer_ratio()
    return ((int(n) * m) % d) / d


def orbit_points(theta, indices, seed=None):
    """Exact ``seed + j * theta mod 1`` for each index ``j``.

    ``theta`` and ``seed`` are 1-d arrays of length k.  The result has shape
    ``(len(indices), k)``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    k = theta.size
    seed = np.zeros(k) if seed is None else np.atleast_1d(np.asarray(seed, dtype=float))
    out = np.empty((len(indices), k))
    for c in range(k):
        m, d = theta[c].as_integer_ratio()
        sm, sd = seed[c].as_integer_ratio()
        # common denominator keeps the sum exact
        den = max(d, sd)
        m *= den // d
        sm *= den // sd
        for row, j in enumerate(indices):
            out[row, c] = ((int(j) * m + sm) % den) / den
    return out


class ModelMap:
    """A dynamical system on the k-torus given through its lift."""

    k: int
    description: str = ""

    def eval_lift(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def eval(self, x):
        return reduce_mod1(self.eval_lift(reduce_mod1(np.asarray(x, dtype=float))))

    def __call__(self, x):
        return self.eval(x)


class TranslationMap(ModelMap):
    """``x -> x + theta``; conformal (its Jacobian is the identity)."""

    def __init__(self, theta):
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float))
        self.k = self.theta.size
        self.description = f"translation by {self.theta.tolist()}"

    def eval_lift(self, x):
        return np.asarray(x, dtype=float) + self.theta

    def eval(self, x):
        # Exact when theta and x are dyadic with few bits (e.g. quarter turns).
        return reduce_mod1(np.asarray(x, dtype=float) + self.theta)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(self.k), x.shape[:-1] + (self.k, self.k)).copy()


def translation_map(theta):
    return TranslationMap(theta)


class LiftedMap(ModelMap):
    """Wraps user callables ``lift(x)`` and ``jacobian(x)`` as a :class:`ModelMap`."""

    def __init__(self, k, lift, jacobian, description=""):
        self.k = int(k)
        self._lift = lift
        self._jacobian = jacobian
        self.description = description

    def eval_lift(self, x):
        return np.asarray(self._lift(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x):
        return np.asarray(self._jacobian(np.asarray(x, dtype=float)), dtype=float)


@dataclass
class OrbitTrace:
    start: np.ndarray
    points: np.ndarray
    lifts: np.ndarray | None = None

    @property
    def n(self):
        return len(self.points) - 1


def iterate(f, x, n, keep_lifts=False):
    """Orbit ``x, f(x), ..., f^n(x)`` of a single point."""
    if n < 0:
        raise ValueError("n must be non-negative")
    x = reduce_mod1(np.atleast_1d(np.asarray(x, dtype=float)))
    pts = np.empty((n + 1, f.k))
    pts[0] = x
    lifts = None
    if keep_lifts:
        lifts = np.empty((n + 1, f.k))
        lifts[0] = x
    cur = x
    lift = x
    for i in range(1, n + 1):
        if keep_lifts:
            lift = f.eval_lift(lift)
            nxt = reduce_mod1(lift)
            lifts[i] = lift
        else:
            nxt = f.eval(cur)
        if not np.all(np.isfinite(nxt)):
            raise NonFinite(f"non-finite coordinate at step {i}")
        pts[i] = nxt
        cur = nxt
    return OrbitTrace(start=x, points=pts, lifts=lifts)


@dataclass
class RotationEstimate:
    value: np.ndarray
    error_bar: float
    n: int
    displacement: np.ndarray = field(repr=False, default=None)


def rotation_vector(f, x, n):
    """Birkhoff estimate ``(F^n(x) - x) / n mod 1`` of the rotation vector.

    The lift is iterated in fractional/integer split form so the integer part
    of the displacement never eats precision.  The error bar is
    ``2 k max|F(y) - y| / n`` over the orbit.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    x = reduce_mod1(np.atleast_1d(np.asarray(x, dtype=float)))
    total = np.zeros(f.k)
    cur = x
    max_step = 0.0
    for i in range(n):
        img = f.eval_lift(cur)
        if not np.all(np.isfinite(img)):
            raise NonFinite(f"non-finite coordinate at step {i + 1}")
        step = img - cur
        total += step
        max_step = max(max_step, float(np.max(np.abs(step))))
        cur = reduce_mod1(img)
    value = reduce_mod1(total / n)
    return RotationEstimate(value=value, error_bar=2.0 * f.k * max_step / n, n=n, displacement=total)


@dataclass
class Cocycle:
    """Step Jacobians and their ordered product.

    The product is kept as ``normalized`` (unit |det|) times
    ``exp(logabsdet / k)`` so long products neither overflow nor lose the
    conformal class.
    """

    steps: list
    normalized: np.ndarray
    logabsdet: float

    @property
    def product(self):
        k = self.normalized.shape[0]
        return self.normalized * math.exp(self.logabsdet / k)

    def dist_to_base(self):
        return dist_to_base(self.normalized, logabsdet=0.0)


def cocycle(f, x, n):
    """Per-step Jacobians along the orbit and ``Df^n(x) = Df(f^{n-1}x) ... Df(x)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    x = reduce_mod1(np.atleast_1d(np.asarray(x, dtype=float)))
    k = f.k
    steps = []
    prod = np.eye(k)
    logdet = 0.0
    cur = x
    for i in range(n):
        J = np.asarray(f.jacobian(cur), dtype=float).reshape(k, k)
        sign, ld = np.linalg.slogdet(J)
        if sign == 0 or ld < math.log(1e-14):
            raise SingularMatrix(f"singular Jacobian at step {i}")
        steps.append(J)
        prod = (J / math.exp(ld / k)) @ prod
        logdet += ld
        cur = f.eval(cur)
    return Cocycle(steps=steps, normalized=prod, logabsdet=logdet)


# ---------------------------------------------------------------------------
# Denjoy counterexample on the circle


def inserted_length_series(c, power=1.0):
    """``c * sum_{n in Z} (1 + n^2)^(-power)``; closed form ``c pi coth(pi)`` for power 1."""
    if power == 1.0:
        return c * math.pi / math.tanh(math.pi)
    # direct summation with the integral tail bound
    N = 200000
    n = np.arange(1, N + 1, dtype=float)
    s = 1.0 + 2.0 * math.fsum((1.0 + n * n) ** (-power))
    tail = 2.0 * N ** (1 - 2 * power) / (2 * power - 1)
    return c * (s + tail)


def tail_bound(c, N, power=1.0):
    """Certified bound on ``sum_{|n| > N} c (1 + n^2)^(-power)``."""
    # sum_{n>N} n^(-2p) <= N^(1-2p) / (2p - 1)
    return 2.0 * c * N ** (1.0 - 2.0 * power) / (2.0 * power - 1.0)


# Right endpoints recomputed as left + length may land a few ulps outside the
# stored interval; they still belong to it.
_SNAP = 4e-16


class DenjoyCircleMap(ModelMap):
    """C^1 circle diffeomorphism with wandering intervals and rotation number alpha.

    Intervals ``I_n`` (``|n| <= N_t``) of length ``l_n = c / (1 + n^2)^p`` are
    inserted at the rotation orbit ``{n alpha}``; the remaining length
    ``1 - sum l_n`` is spread uniformly.  Between intervals the map has slope 1;
    ``I_n -> I_{n+1}`` is the cubic bridge whose derivative in normalised
    coordinates is ``1 + 6 (rho - 1) t (1 - t)`` with ``rho = l_{n+1} / l_n``.

    Truncation leaves two defects of size ``l_{N_t}``: ``I_{N_t}`` is collapsed
    to a point and the map jumps over ``I_{-N_t}``.  Cantor-side positions
    differ from the untruncated construction by at most ``tail_bound``.
    """

    k = 1

    def __init__(self, alpha, c, truncation, power=1.0):
        self.alpha = float(alpha)
        self.c = float(c)
        self.N = int(truncation)
        self.power = float(power)
        N = self.N
        self.indices = np.arange(-N, N + 2)
        p = orbit_points(np.array([self.alpha]), self.indices)[:, 0]
        # orbit points for n = -N..N (positions) plus n = N+1 (collapse target of I_N)
        self.orbit = p[:-1]
        self.orbit_next = p[-1]
        self.lengths = self.c / (1.0 + self.indices[:-1].astype(float) ** 2) ** self.power
        self.inserted = math.fsum(self.lengths)
        self.slope = 1.0 - self.inserted
        order = np.argsort(self.orbit, kind="stable")
        if np.any(np.diff(self.orbit[order]) <= 0):
            raise ValueError("orbit points coincide; alpha is rational at this truncation")
        self._order = order
        self._sorted_p = self.orbit[order]
        self._sorted_len = self.lengths[order]
        self._cum = np.concatenate([[0.0], np.cumsum(self._sorted_len)])
        self._left_sorted = self.slope * self._sorted_p + self._cum[:-1]
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        self._rank = rank  # rank[n + N] = sorted position of I_n
        self.left = self._left_sorted[rank]
        wrap = np.round(self.orbit + self.alpha - np.append(self.orbit[1:], self.orbit_next))
        self._wrap = wrap
        ratios = self.lengths[1:] / self.lengths[:-1]
        if np.min(ratios) <= 1.0 / 3.0:
            raise ValueError("length ratio below 1/3 makes the bridge non-monotone")
        # plain-float copies for the scalar fast path
        self._lp = self._left_sorted.tolist()
        self._ll = self._sorted_len.tolist()
        self._lo = (self._order - N).tolist()
        self._pp = self._sorted_p.tolist()
        self._cc = self._cum.tolist()
        self._left_l = self.left.tolist()
        self._len_l = self.lengths.tolist()
        self._wrap_l = wrap.tolist()
        self._collapsed = float(self.H(np.asarray(self.orbit_next)))
        self.description = (
            f"Denjoy circle map: alpha={self.alpha!r}, c={self.c!r}, "
            f"l_n = c/(1+n^2)^{self.power}, |n| <= {N}"
        )

    # positions -------------------------------------------------------------

    def H(self, y):
        """Blow-up coordinate of a rotation-circle point ``y`` in [0, 1)."""
        y = np.asarray(y, dtype=float)
        pos = np.searchsorted(self._sorted_p, y, side="left")
        return self.slope * y + self._cum[pos]

    def interval(self, n):
        """``(left, length)`` of ``I_n``."""
        i = n + self.N
        return float(self.left[i]), float(self.lengths[i])

    def locate(self, u):
        """Return ``(n, t)`` arrays; ``n`` is the interval index or a sentinel for the Cantor part."""
        u = np.asarray(u, dtype=float)
        kk = np.searchsorted(self._left_sorted, u, side="right") - 1
        kkc = np.clip(kk, 0, None)
        inside = (kk >= 0) & (u <= self._left_sorted[kkc] + self._sorted_len[kkc] + _SNAP)
        n = np.where(inside, self._order[kkc] - self.N, self.N + 1)
        t = np.where(inside, np.minimum((u - self._left_sorted[kkc]) / self._sorted_len[kkc], 1.0), np.nan)
        y = (u - self._cum[kk + 1]) / self.slope
        return n, t, inside, y

    def _eval_scalar(self, x):
        fl = math.floor(x)
        u = x - fl
        kk = bisect.bisect_right(self._lp, u) - 1
        if kk >= 0 and u <= self._lp[kk] + self._ll[kk] + _SNAP:
            n = self._lo[kk]
            i = n + self.N
            if n == self.N:
                return fl + self._collapsed + self._wrap_l[i]
            t = min((u - self._lp[kk]) / self._ll[kk], 1.0)
            rho = self._len_l[i + 1] / self._len_l[i]
            return fl + self._wrap_l[i] + self._left_l[i + 1] + self._len_l[i] * (
                t + (rho - 1.0) * (3 * t * t - 2 * t * t * t)
            )
        y = (u - self._cc[kk + 1]) / self.slope + self.alpha
        fy = math.floor(y)
        v = y - fy
        return fl + fy + self.slope * v + self._cc[bisect.bisect_left(self._pp, v)]

    def eval_lift(self, x):
        x = np.asarray(x, dtype=float)
        if x.size == 1:
            return np.full(x.shape, self._eval_scalar(float(x.reshape(-1)[0])))
        fl = np.floor(x)
        u = x - fl
        u = np.where(u >= 1.0, 0.0, u)
        n, t, inside, y = self.locate(u)
        # Cantor part: y -> y + alpha
        yy = y + self.alpha
        fy = np.floor(yy)
        v = yy - fy
        cantor = fy + self.H(v)
        # interval part
        idx = np.clip(n + self.N, 0, 2 * self.N)
        last = n == self.N
        nxt = np.clip(idx + 1, 0, 2 * self.N)
        rho = self.lengths[nxt] / self.lengths[idx]
        tt = np.where(inside, t, 0.0)
        bridge = self.left[nxt] + self.lengths[idx] * (tt + (rho - 1.0) * (3 * tt**2 - 2 * tt**3))
        collapsed = self.H(np.asarray(self.orbit_next))
        inner = np.where(last, collapsed, bridge) + self._wrap[idx]
        return fl + np.where(inside, inner, cantor)

    def derivative(self, x):
        x = reduce_mod1(np.asarray(x, dtype=float))
        n, t, inside, _ = self.locate(x)
        idx = np.clip(n + self.N, 0, 2 * self.N)
        nxt = np.clip(idx + 1, 0, 2 * self.N)
        rho = self.lengths[nxt] / self.lengths[idx]
        tt = np.where(inside, t, 0.0)
        d = 1.0 + 6.0 * (rho - 1.0) * tt * (1.0 - tt)
        d = np.where(n == self.N, 0.0, d)
        return np.where(inside, d, 1.0)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return self.derivative(x[..., 0])[..., None, None]

    # properties ---------------------------------------------------------------

    @property
    def total_length(self):
        """Length of the full (untruncated) family of inserted intervals."""
        return inserted_length_series(self.c, self.power)

    @property
    def tail(self):
        return tail_bound(self.c, self.N, self.power)


def denjoy_circle(alpha, c, truncation=20000, tail_tol=1e-4, power=1.0):
    """Build the Denjoy counterexample with rotation number ``alpha``.

    Raises :class:`BudgetExceeded` when the full family of intervals does not
    fit in the circle and :class:`TailTooLarge` when the certified tail bound
    ``2c / N_t`` is not below ``tail_tol``.
    """
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if c <= 0:
        raise ValueError("c must be positive")
    if power <= 0.5:
        raise BudgetExceeded(f"power {power} gives a divergent interval series")
    total = inserted_length_series(c, power)
    if total >= 1.0:
        raise BudgetExceeded(f"total inserted length {total!r} >= 1")
    if tail_bound(c, truncation, power) >= tail_tol:
        raise TailTooLarge(
            f"tail bound {tail_bound(c, truncation, power)!r} not below {tail_tol!r}; raise the truncation"
        )
    return DenjoyCircleMap(alpha, c, truncation, power)


def check_lift_equivariance(f, rng, samples=100, span=5):
    """Max deviation of ``F(x + v) - F(x) - v`` over random points and integer vectors."""
    x = rng.random((samples, f.k))
    v = rng.integers(-span, span + 1, size=(samples, f.k)).astype(float)
    return float(np.max(np.abs(f.eval_lift(x + v) - f.eval_lift(x) - v)))


def wandering_images(f, n, interval=0):
    """Images of ``I_interval`` under ``f^1 .. f^n``, obtained by iterating its endpoints.

    Returned as an ``(n + 1, 2)`` array of ``[left, right]`` on the circle,
    row 0 being the interval itself.
    """
    left, length = f.interval(interval)
    ends = np.array([left, left + length])
    out = [ends.copy()]
    for _ in range(n):
        img = f.eval_lift(ends)
        ends = img - np.floor(img[0])
        out.append(ends.copy())
    return np.array(out)


def intervals_disjoint(intervals):
    """Pairwise disjointness of closed circle intervals, with outward rounding.

    Each interval is widened by one ulp on each side before the sorted sweep,
    so touching or rounding-level overlaps count as intersections.
    """
    iv = np.asarray(intervals, dtype=float)
    lo = np.nextafter(iv[:, 0], -np.inf)
    hi = np.nextafter(iv[:, 1], np.inf)
    # unwrap intervals that cross 1 into two pieces
    pieces = []
    for a, b in zip(lo, hi):
        if b > 1.0:
            pieces += [(a, 1.0), (0.0, b - 1.0)]
        else:
            pieces.append((a, b))
    pieces.sort()
    return all(pieces[i][1] < pieces[i + 1][0] for i in range(len(pieces) - 1))


def interval_log_distortion(f, n_values, samples=2001, interval=0):
    """``max over I_interval of |log Df^n|`` for each ``n`` in ``n_values``.

    Uses the chain rule along a uniform grid of the interval (endpoints
    included); also returns the grid mean of ``Df^n`` for comparison with the
    mean-value oracle ``l_{n} / l_0``.
    """
    n_values = sorted(int(n) for n in n_values)
    left, length = f.interval(interval)
    x = left + length * np.linspace(0.0, 1.0, samples)
    logd = np.zeros(samples)
    out = {}
    step = 0
    for n in n_values:
        while step < n:
            logd += np.log(f.derivative(x))
            x = reduce_mod1(f.eval_lift(x))
            step += 1
        out[n] = (float(np.max(np.abs(logd))), float(np.mean(np.exp(logd))))
    return out
