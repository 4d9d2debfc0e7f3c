"""Trapping an enlarged wandering ball inside itself.

Given a wandering ball ``B(x_0, a_0)`` and constants ``lam > 1`` and
``lam' > 1`` with ``g(B(x, a)) = B(y, b)  =>  g(B(x, lam a)) within B(y, lam' b)``,
a return time ``n`` with

    a_n < (lam - 1) a_0 / (2 lam')   and   |x_n - x_0| < a_0 + (lam - 1) a_0 / 2

forces ``f^n`` to map the closed ball ``B(x_0, lam a_0)`` into itself, so
``f^n`` has a fixed point there.  A translation with no periodic points
cannot be a factor of such a map; the report records that clash.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .blowup import AffineMap, SimilarityDynamics, collapse
from .dynamics import TranslationMap, reduce_mod1, torus_delta
from .errors import (
    DenjoyLabError,
    IncompleteEvidence,
    NoConvergence,
    NotFound,
    UndefinedAtSample,
)

SAFETY = 1.05
FIXED_POINT_TOL = 1e-10


@dataclass(frozen=True)
class TrapParams:
    lam: float = 2.0
    lam_prime: float = 2.0
    horizon: int = 2000
    boundary_samples: int = 10_000
    margin: float = 0.0
    seed: int = 0
    interior_grid: int = 9

    def __post_init__(self):
        if not self.lam > 1.0:
            raise ValueError("lambda must exceed 1")
        if not self.lam_prime > 1.0:
            raise ValueError("lambda' must exceed 1")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.margin < 0:
            raise ValueError("inclusion margin must be non-negative")

    @property
    def threshold_factors(self):
        return (self.lam - 1.0) / (2.0 * self.lam_prime), 1.0 + (self.lam - 1.0) / 2.0


def radius_threshold(lam, lam_prime, alpha0):
    return (lam - 1.0) * alpha0 / (2.0 * lam_prime)


def displacement_threshold(lam, alpha0):
    return alpha0 + ((lam - 1.0) / 2.0) * alpha0


# ---------------------------------------------------------------------------
# sampling


def sphere_points(k, count, rng=None):
    """Quasi-uniform unit vectors: equally spaced angles for k = 2, a Fibonacci
    lattice for k = 3, normalised Gaussians otherwise."""
    if k == 2:
        t = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if k == 3:
        i = np.arange(count) + 0.5
        z = 1.0 - 2.0 * i / count
        phi = np.pi * (1.0 + 5**0.5) * i
        rxy = np.sqrt(1.0 - z * z)
        return np.stack([rxy * np.cos(phi), rxy * np.sin(phi), z], axis=1)
    rng = np.random.default_rng(0) if rng is None else rng
    v = rng.standard_normal((count, k))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def interior_grid(k, m):
    """Points of an ``m^k`` grid on [-1, 1]^k that lie in the closed unit ball."""
    axis = np.linspace(-1.0, 1.0, m)
    grid = np.stack(np.meshgrid(*([axis] * k), indexing="ij"), axis=-1).reshape(-1, k)
    return grid[np.linalg.norm(grid, axis=1) <= 1.0]


def _evaluate(g, pts):
    try:
        out = np.asarray(g(pts), dtype=float)
    except DenjoyLabError as exc:
        raise UndefinedAtSample(str(exc)) from exc
    if out.shape != pts.shape or not np.all(np.isfinite(out)):
        raise UndefinedAtSample("map returned non-finite or misshapen values")
    return out


# ---------------------------------------------------------------------------
# expansion constant of the return map


@dataclass
class LambdaPrime:
    raw: float
    value: float
    samples: int


def estimate_lambda_prime(g, x0, alpha, y0, beta, lam=2.0, samples=512, rng=None):
    """Empirical ``lam'`` with ``g(B(x0, lam alpha)) within B(y0, lam' beta)``.

    ``raw`` is the sampled sup of ``|g(x) - y0| / beta`` over the boundary
    sphere and an interior grid; ``value`` inflates it by 5%.
    """
    x0 = np.asarray(x0, dtype=float)
    k = x0.size
    dirs = sphere_points(k, samples, rng)
    pts = np.concatenate([x0 + lam * alpha * dirs, x0 + lam * alpha * interior_grid(k, 5)])
    img = _evaluate(g, pts)
    raw = float(np.max(np.linalg.norm(img - np.asarray(y0, dtype=float), axis=1)) / beta)
    return LambdaPrime(raw=raw, value=SAFETY * raw, samples=len(pts))


def _closest_lift(system, G, j0, n):
    c0 = system.center(j0)
    target = c0 + torus_delta(c0, system.center(j0 + n))
    shift = np.round(G(c0) - target)
    return AffineMap(G.linear, G.offset - shift)


def return_chain(system, n, j0=0):
    """Lift of ``f^n`` on ball ``j0`` (composed similarities), shifted by an
    integer vector so the image centre is the closest representative."""
    return _closest_lift(system, SimilarityDynamics(system).chain(j0, n), j0, n)


def chain_lambda_prime(system, lam=2.0, horizon=None, samples=256, j0=0, rng=None):
    """Max of :func:`estimate_lambda_prime` over the return chains ``n = 1..horizon``."""
    horizon = system.J - j0 if horizon is None else horizon
    c0, a0 = system.center(j0), system.radius(j0)
    raw = 0.0
    count = 0
    for n, G in enumerate(SimilarityDynamics(system).chains(j0, horizon), start=1):
        G = _closest_lift(system, G, j0, n)
        est = estimate_lambda_prime(G, c0, a0, G(c0), system.radius(j0 + n), lam, samples, rng)
        raw = max(raw, est.raw)
        count += est.samples
    return LambdaPrime(raw=raw, value=SAFETY * raw, samples=count)


# ---------------------------------------------------------------------------
# trap time


@dataclass
class TrapSearch:
    n: int
    alpha0: float
    alpha_n: float
    threshold1: float
    displacement: float
    threshold2: float


def find_trap_time(system, params, j0=0):
    """Smallest ``n`` in ``1..horizon`` satisfying both return inequalities strictly."""
    horizon = params.horizon
    if j0 + horizon > system.J:
        raise ValueError(f"horizon {horizon} runs past the window edge J = {system.J}")
    c0, a0 = system.center(j0), system.radius(j0)
    t1 = radius_threshold(params.lam, params.lam_prime, a0)
    t2 = displacement_threshold(params.lam, a0)
    best, best_score = None, math.inf
    for n in range(1, horizon + 1):
        an = system.radius(j0 + n)
        disp = float(np.linalg.norm(torus_delta(c0, system.center(j0 + n))))
        found = TrapSearch(n, a0, an, t1, disp, t2)
        if an < t1 and disp < t2:
            return found
        score = max(an / t1, disp / t2)
        if score < best_score:
            best, best_score = found, score
    raise NotFound(f"no trap time within horizon {horizon}", near_miss=best)


# ---------------------------------------------------------------------------
# inclusion and fixed point


@dataclass
class InclusionResult:
    verified: bool
    worst_margin: float
    samples: int


def verify_inclusion(g, center, radius, params, rng=None):
    """Check ``g(closed B(center, radius)) within B(center, radius - margin)`` on samples."""
    center = np.asarray(center, dtype=float)
    k = center.size
    rng = np.random.default_rng(params.seed) if rng is None else rng
    pts = np.concatenate(
        [
            center + radius * sphere_points(k, params.boundary_samples, rng),
            center + radius * interior_grid(k, params.interior_grid),
        ]
    )
    img = _evaluate(g, pts)
    margins = radius - np.linalg.norm(img - center, axis=1)
    worst = float(margins.min())
    return InclusionResult(verified=bool(worst > params.margin), worst_margin=worst, samples=len(pts))


@dataclass
class FixedPoint:
    point: np.ndarray
    residual: float
    iterations: int
    damped: bool


def locate_fixed_point(g, center, radius=None, tol=FIXED_POINT_TOL, max_iter=10_000):
    """Locate a fixed point of ``g`` starting from ``center``.

    Plain iteration first; after ``max_iter`` steps without convergence, damped
    iteration ``x <- (1 - s) x + s g(x)`` with ``s`` halved whenever the
    residual grows.  Raises :class:`NoConvergence` carrying the best point,
    also when ``radius`` is given and the point lies outside that ball.
    """
    x = np.asarray(center, dtype=float).copy()

    def res(p):
        return float(np.linalg.norm(_evaluate(g, p[None, :])[0] - p))

    best, best_r = x.copy(), res(x)
    for i in range(max_iter):
        if best_r < tol:
            break
        x = _evaluate(g, x[None, :])[0]
        r = res(x)
        if r < best_r:
            best, best_r = x.copy(), r
    damped = False
    if best_r >= tol:
        damped = True
        s = 0.5
        x = np.asarray(center, dtype=float).copy()
        r_prev = res(x)
        for i in range(max_iter):
            x = (1.0 - s) * x + s * _evaluate(g, x[None, :])[0]
            r = res(x)
            if r < best_r:
                best, best_r = x.copy(), r
            if best_r < tol:
                break
            if r > r_prev:
                s *= 0.5
                if s < 1e-12:
                    break
            r_prev = r
    residual = res(best)
    if residual >= tol:
        raise NoConvergence(f"best residual {residual!r} after damping", best_point=best, best_residual=residual)
    if radius is not None and np.linalg.norm(best - np.asarray(center, dtype=float)) > radius:
        raise NoConvergence("fixed point lies outside the trapped ball", best_point=best, best_residual=residual)
    return FixedPoint(point=best, residual=residual, iterations=i + 1, damped=damped)


# ---------------------------------------------------------------------------
# certificate and report


@dataclass
class TrapCertificate:
    n: int
    alpha0: float
    alpha_n: float
    threshold1: float
    displacement: float
    threshold2: float
    lam: float
    lam_prime: float
    chain_margin: float
    inclusion_verified: bool
    inclusion_worst_margin: float
    inclusion_samples: int
    fixed_point: list | None
    fixed_point_residual: float | None
    closed_form_fixed_point: list | None
    seed: int
    j0: int = 0
    notes: list = field(default_factory=list)

    @property
    def valid(self):
        return (
            self.alpha_n < self.threshold1
            and self.displacement < self.threshold2
            and self.inclusion_verified
        )

    def as_record(self):
        rec = asdict(self)
        rec["record"] = "trap_certificate"
        rec["valid"] = self.valid
        return rec

    def append_to(self, path):
        with open(path, "a") as fh:
            fh.write(json.dumps(self.as_record(), sort_keys=True) + "\n")


def certify_trap(system, params, j0=0):
    """Search, verify inclusion, and locate the fixed point for one ball.

    Raises :class:`NotFound` when no trap time exists inside the horizon; a
    failed fixed-point location is recorded in ``notes`` (existence is already
    certified by the inclusion).
    """
    search = find_trap_time(system, params, j0)
    G = return_chain(system, search.n, j0)
    c0 = system.center(j0)
    R = params.lam * search.alpha0
    inc = verify_inclusion(G, c0, R, params)
    chain_margin = R - (search.displacement + params.lam_prime * search.alpha_n)
    notes = []
    fp = res = None
    try:
        located = locate_fixed_point(G, c0, R)
        fp, res = located.point.tolist(), located.residual
    except NoConvergence as exc:
        notes.append(f"fixed point not located numerically: {exc}")
    try:
        closed = G.fixed_point().tolist()
    except np.linalg.LinAlgError:
        closed = None
    return TrapCertificate(
        n=search.n,
        alpha0=search.alpha0,
        alpha_n=search.alpha_n,
        threshold1=search.threshold1,
        displacement=search.displacement,
        threshold2=search.threshold2,
        lam=params.lam,
        lam_prime=params.lam_prime,
        chain_margin=chain_margin,
        inclusion_verified=inc.verified,
        inclusion_worst_margin=inc.worst_margin,
        inclusion_samples=inc.samples,
        fixed_point=fp,
        fixed_point_residual=res,
        closed_form_fixed_point=closed,
        seed=params.seed,
        j0=j0,
        notes=notes,
    )


@dataclass
class MinimalityEvidence:
    minimal: bool
    horizon: int
    closest_return: float
    closest_n: int
    period: int | None


def minimality_evidence(theta, horizon, tol=1e-9):
    """No translation orbit point comes within ``tol`` of the start for ``1 <= n <= horizon``."""
    T = TranslationMap(theta)
    x = np.zeros(T.k)
    best, best_n, period = math.inf, 0, None
    for n in range(1, horizon + 1):
        x = T.eval(x)
        d = float(np.linalg.norm(torus_delta(np.zeros(T.k), x)))
        if d < best:
            best, best_n = d, n
        if d < tol:
            period = n
            break
    return MinimalityEvidence(minimal=period is None, horizon=horizon, closest_return=best, closest_n=best_n, period=period)


def semiconjugacy_residual(system, samples=1000, rng=None):
    """Max of ``|collapse(g(x)) - collapse(x) - theta|`` (mod 1) over random in-ball points."""
    rng = np.random.default_rng(0) if rng is None else rng
    phi = collapse(system)
    g = SimilarityDynamics(system)
    k = system.k
    js = rng.integers(-system.J, system.J, size=samples)
    dirs = _random_dirs(k, samples, rng)
    rad = np.array([system.radius(int(j)) for j in js]) * rng.random(samples) ** (1.0 / k) * 0.999
    pts = reduce_mod1(system.centers[js + system.J] + rad[:, None] * dirs)
    worst = 0.0
    for p in pts:
        lhs = phi(g.eval(p))
        rhs = reduce_mod1(phi(p) + system.theta)
        worst = max(worst, float(np.max(np.abs(torus_delta(rhs, lhs)))))
    return worst


def _random_dirs(k, n, rng):
    v = rng.standard_normal((n, k))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass
class ContradictionReport:
    minimality: dict
    periodic_point: dict
    conclusion: str
    contradiction: bool
    semiconjugacy_residual: float

    def as_record(self):
        rec = asdict(self)
        rec["record"] = "contradiction_report"
        return rec


def contradiction_report(system, params, certificate, evidence, semiconj_tol=1e-10):
    """Assemble the three clauses: minimal factor, trapped periodic point, clash.

    Raises :class:`IncompleteEvidence` if the trap certificate is missing or
    invalid, or if neither a located fixed point nor a verified inclusion is
    available.
    """
    missing = []
    if certificate is None:
        missing.append("trap certificate")
    elif not certificate.valid:
        missing.append("valid trap certificate")
    if evidence is None:
        missing.append("minimality evidence")
    if missing:
        raise IncompleteEvidence(missing)
    semi = semiconjugacy_residual(system, samples=200)
    periodic = {
        "period": certificate.n,
        "ball_radius": params.lam * certificate.alpha0,
        "inclusion_verified": certificate.inclusion_verified,
        "fixed_point": certificate.fixed_point,
        "residual": certificate.fixed_point_residual,
        "exists": certificate.inclusion_verified,
    }
    minimal = {
        "minimal": evidence.minimal,
        "horizon": evidence.horizon,
        "closest_return": evidence.closest_return,
        "closest_n": evidence.closest_n,
        "period": evidence.period,
    }
    flag = bool(evidence.minimal and periodic["exists"] and semi <= semiconj_tol)
    if flag:
        conclusion = (
            f"f^{certificate.n} maps the closed ball of radius {periodic['ball_radius']:.6g} into itself and so "
            "has a fixed point, while the factor translation has no periodic orbit up to the horizon; "
            "the periodic point would project to a periodic point of a minimal translation"
        )
    elif not evidence.minimal:
        conclusion = f"translation has period {evidence.period}; no contradiction with a periodic point"
    else:
        conclusion = "semiconjugacy relation failed on samples; no conclusion drawn"
    return ContradictionReport(
        minimality=minimal,
        periodic_point=periodic,
        conclusion=conclusion,
        contradiction=flag,
        semiconjugacy_residual=semi,
    )
