"""Optimal discriminator outputs at an overfitting source, solved two ways.

The local objective at one real point x0 with ``m0`` close fakes is

    h(xi0, xi_1..xi_m0) = log s(xi0) + (n/m) sum log(1 - s(xi_i))
                          - (n k / m0) sum (xi0 - xi_i)^2
                          + n lam sum log s(xi_i)

(``lam = 0`` gives the difference-penalized objective).  ``solve_prop2`` and
``solve_prop3`` reduce the stationarity conditions to one scalar equation in
xi0 and bisect it; ``brute_force_max`` maximizes h over all m0 + 1
coordinates without assuming the fakes share one value.  The indicator
s(-xi)(xi0 - xi) scales the generator gradient at the close pair.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .autodiff import log_sigmoid, sigmoid_scalar as sig, stable_sigmoid

BRACKET_HI = 40.0
BISECT_TOL = 1e-12
MAX_STEP = 10.0
EPS = float(np.finfo(np.float64).eps)


class BracketError(ValueError):
    """No sign change found for the scalar stationarity equation."""


class OracleError(RuntimeError):
    """Brute-force maximization failed to converge or broke symmetry."""


class DegenerateError(ValueError):
    """Anchor points are not separable by the constructed discriminator."""


@dataclass(frozen=True)
class PropositionProblem:
    n: int
    m: int
    m0: int
    k: float
    lam: float = 0.0

    def __post_init__(self):
        if min(self.n, self.m, self.m0) < 1:
            raise ValueError("n, m, m0 must be >= 1")
        if self.m0 > self.m:
            raise ValueError("m0 cannot exceed m")
        if not self.k > 0:
            raise ValueError("k must be > 0")
        if not self.lam >= 0:
            raise ValueError("lam must be >= 0")

    @property
    def ratio(self) -> float:
        """n m0 / m."""
        return self.n * self.m0 / self.m


@dataclass
class SolveResult:
    xi0: float
    xi: float
    indicator: float
    residual: float  # max |dh/dxi_j| at the solution
    cross_residual: float  # |(xi0 - xi) - s(-xi0)/(2nk)|
    xis: Optional[np.ndarray] = field(default=None, repr=False)


def indicator(xi0: float, xi: float) -> float:
    return sig(-xi) * (xi0 - xi)


# ---------------------------------------------------------------------------
# objective and derivatives over all coordinates
# ---------------------------------------------------------------------------


def h_value(prob: PropositionProblem, z: np.ndarray) -> float:
    xi0, xs = z[0], z[1:]
    n, m, m0, k, lam = prob.n, prob.m, prob.m0, prob.k, prob.lam
    val = float(log_sigmoid(xi0))
    val += n / m * float(np.sum(log_sigmoid(-xs)))
    val -= n * k / m0 * float(np.sum((xi0 - xs) ** 2))
    if lam:
        val += n * lam * float(np.sum(log_sigmoid(xs)))
    return val


def h_grad(prob: PropositionProblem, z: np.ndarray) -> np.ndarray:
    xi0, xs = z[0], z[1:]
    n, m, m0, k, lam = prob.n, prob.m, prob.m0, prob.k, prob.lam
    c = 2 * n * k / m0
    g = np.empty_like(z)
    g[0] = sig(-xi0) - c * float(np.sum(xi0 - xs))
    g[1:] = -n / m * stable_sigmoid(xs) + c * (xi0 - xs) + n * lam * stable_sigmoid(-xs)
    return g


def h_hessian(prob: PropositionProblem, z: np.ndarray) -> np.ndarray:
    xi0, xs = z[0], z[1:]
    n, m, m0, k, lam = prob.n, prob.m, prob.m0, prob.k, prob.lam
    c = 2 * n * k / m0
    curv = stable_sigmoid(xs) * stable_sigmoid(-xs)
    H = np.zeros((len(z), len(z)))
    H[0, 0] = -sig(xi0) * sig(-xi0) - c * m0
    H[0, 1:] = H[1:, 0] = c
    H[np.arange(1, len(z)), np.arange(1, len(z))] = -n / m * curv - c - n * lam * curv
    return H


def stationarity_residual(prob: PropositionProblem, xi0: float, xi: float) -> float:
    z = np.full(prob.m0 + 1, xi)
    z[0] = xi0
    return float(np.max(np.abs(h_grad(prob, z))))


# ---------------------------------------------------------------------------
# scalar reductions
# ---------------------------------------------------------------------------


def _log_term(prob: PropositionProblem, xi0: float) -> float:
    """log(n m0 / (m s(-xi0)) - 1), using 1/s(-x) = 1 + e^x without cancellation."""
    a = prob.ratio
    if a >= 1.0:
        if a == 1.0:
            return math.log(a) + xi0
        return float(np.logaddexp(math.log(a - 1.0), math.log(a) + xi0))
    return math.log(a) + xi0 + math.log1p(-(1.0 - a) / a * math.exp(-xi0))


def xi_from_xi0(prob: PropositionProblem, xi0: float) -> float:
    """Common fake output given xi0, from the fake-side stationarity (lam = 0)."""
    return -_log_term(prob, xi0)


def reduced_equation(prob: PropositionProblem, xi0: float) -> float:
    """Real-side stationarity after eliminating xi (lam = 0); decreasing in xi0."""
    return sig(-xi0) - 2 * prob.n * prob.k * (xi0 + _log_term(prob, xi0))


def lambda_of_xi0(prob: PropositionProblem, xi0: float) -> float:
    """Fake-as-real weight whose maximizer has real output ``xi0``.

    Both stationarity conditions give xi = xi0 - s(-xi0)/(2nk) and
    n lam s(-xi) = (n/m) s(xi) - s(-xi0)/m0.
    """
    s0 = sig(-xi0)
    xi = xi0 - s0 / (2 * prob.n * prob.k)
    return (prob.n / prob.m * sig(xi) - s0 / prob.m0) / (prob.n * sig(-xi))


def _lower_bound(prob: PropositionProblem) -> float:
    a = prob.ratio
    if a < 1.0:
        return math.log(1.0 / a - 1.0) + 1e-9
    return -BRACKET_HI


def _bisect(fn: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    """Root of a decreasing ``fn`` with fn(lo) > 0 > fn(hi)."""
    flo, fhi = fn(lo), fn(hi)
    best, fbest = (lo, flo) if abs(flo) < abs(fhi) else (hi, fhi)
    while True:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        fm = fn(mid)
        if abs(fm) < abs(fbest):
            best, fbest = mid, fm
        if abs(fm) <= tol:
            return mid
        if fm > 0:
            lo = mid
        else:
            hi = mid
    return best


def _bracket(fn, lo: float, hi: float, what: str) -> tuple[float, float]:
    """Widen [lo, hi] until fn(lo) > 0 > fn(hi) (fn decreasing)."""
    lo0 = lo
    while fn(lo) <= 0:
        if lo < -1e4 or lo != lo0 and lo > 0:
            raise BracketError(f"{what}: no sign change on [{lo}, {hi}]")
        lo = lo * 2 if lo < 0 else lo - 1.0
    while fn(hi) >= 0:
        if hi > 700:
            raise BracketError(f"{what}: no sign change on [{lo}, {hi}]")
        hi *= 2
    return lo, hi


def solve_prop2(prob: PropositionProblem) -> SolveResult:
    """Maximizer of the difference-penalized objective (lam ignored)."""
    p = PropositionProblem(prob.n, prob.m, prob.m0, prob.k, 0.0)
    fn = lambda x: reduced_equation(p, x)  # noqa: E731
    try:
        lo, hi = _bracket(fn, _lower_bound(p), BRACKET_HI, "reduced equation")
    except (OverflowError, ValueError) as e:
        if isinstance(e, BracketError):
            raise
        raise BracketError(f"reduced equation undefined on the scanned interval: {e}") from None
    xi0 = _bisect(fn, lo, hi, BISECT_TOL)
    xi = xi_from_xi0(p, xi0)
    return SolveResult(
        xi0=xi0,
        xi=xi,
        indicator=indicator(xi0, xi),
        residual=stationarity_residual(p, xi0, xi),
        cross_residual=abs((xi0 - xi) - sig(-xi0) / (2 * p.n * p.k)),
    )


def solve_prop3(prob: PropositionProblem) -> SolveResult:
    """Maximizer of the fake-as-real objective by bisection on lam(xi0) = lam.

    lam(xi0) is increasing wherever the fake output is admissible, so the
    root is unique.
    """
    if prob.lam == 0:
        return solve_prop2(prob)
    fn = lambda x: prob.lam - lambda_of_xi0(prob, x)  # noqa: E731
    lo, hi = _bracket(fn, _lower_bound(prob), BRACKET_HI, "fake-as-real equation")
    xi0 = _bisect(fn, lo, hi, BISECT_TOL * max(1.0, prob.lam))
    xi = xi0 - sig(-xi0) / (2 * prob.n * prob.k)
    return SolveResult(
        xi0=xi0,
        xi=xi,
        indicator=indicator(xi0, xi),
        residual=stationarity_residual(prob, xi0, xi),
        cross_residual=abs((xi0 - xi) - sig(-xi0) / (2 * prob.n * prob.k)),
    )


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------


def _ascend(prob, z, max_steps, tol):
    """Newton-preconditioned ascent with backtracking; returns (z, |grad|_inf, converged)."""
    val = h_value(prob, z)
    gnorm = math.inf
    c = 2 * prob.n * prob.k / prob.m0
    stale = 0
    for step in range(max_steps):
        g = h_grad(prob, z)
        gnorm = float(np.max(np.abs(g)))
        # with a heavy penalty the gradient cannot be evaluated below its own
        # rounding error, which then replaces tol
        floor = 8 * EPS * c * prob.m0 * max(1.0, float(np.max(np.abs(z))))
        if gnorm <= max(tol, floor):
            return z, gnorm, True
        H = h_hessian(prob, z)
        # a small shift keeps the solve well posed where the sigmoids saturate
        # and the common-shift direction is flat; the step cap bounds the move
        mu = 1e-10 * float(np.max(np.abs(H)))
        d = -np.linalg.solve(H - mu * np.eye(len(z)), g)
        scale = float(np.max(np.abs(d)))
        if scale > MAX_STEP:
            d *= MAX_STEP / scale
        slope = float(g @ d)
        if not np.all(np.isfinite(d)) or slope <= 0:
            d, slope = g, float(g @ g)
        t = 1.0
        while t > 1e-16:
            cand = z + t * d
            cval = h_value(prob, cand)
            if cval >= val + 1e-4 * t * slope - 1e-15 * abs(val):
                break
            t *= 0.5
        else:
            break
        if np.array_equal(cand, z):
            break
        stale = stale + 1 if cval <= val else 0
        if stale > 100:
            break
        z, val = cand, cval
    return z, gnorm, False


def brute_force_max(
    prob: PropositionProblem,
    n_starts: int = 16,
    max_steps: int = 100_000,
    tol: float = 1e-10,
    seed: int = 0,
    box: float = 20.0,
) -> SolveResult:
    """Maximize h over all m0 + 1 outputs from random starts in [-box, box].

    A start converges when the gradient max-norm reaches ``tol`` (or the
    rounding floor of the gradient, whichever is larger).
    """
    if prob.m0 > 16:
        raise ValueError("brute_force_max supports m0 <= 16")
    rng = np.random.default_rng(seed)
    best_z, best_val, best_g = None, -math.inf, math.inf
    for _ in range(n_starts):
        z0 = rng.uniform(-box, box, size=prob.m0 + 1)
        z, gnorm, ok = _ascend(prob, z0, max_steps, tol)
        val = h_value(prob, z)
        if ok and val > best_val:
            best_z, best_val, best_g = z, val, gnorm
        elif best_z is None and gnorm < best_g:
            best_g = gnorm
    if best_z is None:
        raise OracleError(f"no start converged; best gradient norm {best_g:.3e}")
    xs = best_z[1:]
    if float(xs.max() - xs.min()) > 1e-6:
        raise OracleError(f"fake outputs disagree at the maximizer: spread {xs.max() - xs.min():.3e}")
    xi0, xi = float(best_z[0]), float(xs.mean())
    return SolveResult(
        xi0=xi0,
        xi=xi,
        indicator=indicator(xi0, xi),
        residual=best_g,
        cross_residual=abs((xi0 - xi) - sig(-xi0) / (2 * prob.n * prob.k)),
        xis=best_z,
    )


# ---------------------------------------------------------------------------
# grid sweep
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ("n", "m", "m0", "k", "lambda", "xi0", "xi", "indicator", "residual", "status")


@dataclass
class SweepGrid:
    n: Sequence[int] = (64,)
    m: Sequence[int] = (64,)
    m0: Sequence[int] = (1, 2, 4, 8, 16)
    k: Sequence[float] = (0.1, 1.0, 10.0, 100.0)
    lam: Sequence[float] = (0.0, 0.1, 1.0, 10.0, 1e6)

    def cells(self) -> Iterable[PropositionProblem]:
        for n, m, m0, k, lam in itertools.product(self.n, self.m, self.m0, self.k, self.lam):
            yield PropositionProblem(n, m, m0, float(k), float(lam))


@dataclass
class SweepRow:
    prob: PropositionProblem
    result: Optional[SolveResult]
    status: str


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SweepReport:
    rows: list[SweepRow]
    verdicts: list[Verdict]

    @property
    def passed(self) -> bool:
        return all(r.status == "ok" for r in self.rows) and all(v.passed for v in self.verdicts)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in self.rows:
            p, r = row.prob, row.result
            nums = ["", "", "", ""] if r is None else [repr(r.xi0), repr(r.xi), repr(r.indicator), repr(r.residual)]
            w.writerow([p.n, p.m, p.m0, repr(p.k), repr(p.lam), *nums, row.status])
        return buf.getvalue()

    def summary(self) -> str:
        lines = []
        for row in self.rows:
            if row.status != "ok":
                p = row.prob
                lines.append(
                    f"FAIL cell n={p.n} m={p.m} m0={p.m0} k={p.k:g} lambda={p.lam:g}: {row.status}"
                )
        for v in self.verdicts:
            lines.append(f"{'PASS' if v.passed else 'FAIL'} {v.name}{': ' + v.detail if v.detail else ''}")
        lines.append("OVERALL " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def _strict(values: list[float], increasing: bool) -> bool:
    pairs = zip(values, values[1:])
    return all((b > a) if increasing else (b < a) for a, b in pairs)


def sweep(
    grid: SweepGrid,
    solver: Callable[[PropositionProblem], SolveResult] = solve_prop3,
    oracle: Optional[Callable[[PropositionProblem], SolveResult]] = brute_force_max,
    oracle_tol: float = 1e-6,
    residual_tol: float = 1e-9,
) -> SweepReport:
    """Solve every grid cell, cross-check against the oracle and judge monotonicity.

    A failing cell is marked and the sweep continues.
    """
    rows: list[SweepRow] = []
    for prob in grid.cells():
        try:
            res = solver(prob)
        except (BracketError, ValueError, OverflowError, ZeroDivisionError) as e:
            rows.append(SweepRow(prob, None, f"solver error: {e}"))
            continue
        status = "ok"
        if res.residual > residual_tol:
            status = f"residual {res.residual:.3e} above {residual_tol:g}"
        elif oracle is not None and prob.m0 <= 16:
            try:
                ref = oracle(prob)
            except OracleError as e:
                status = f"oracle error: {e}"
            else:
                gap = max(abs(ref.xi0 - res.xi0), abs(ref.xi - res.xi))
                if gap > oracle_tol:
                    status = f"oracle mismatch {gap:.3e}"
        rows.append(SweepRow(prob, res, status))
    return SweepReport(rows, _verdicts(rows))


def _verdicts(rows: list[SweepRow]) -> list[Verdict]:
    ok = {
        (r.prob.n, r.prob.m, r.prob.m0, r.prob.k, r.prob.lam): r.result.indicator
        for r in rows
        if r.result is not None
    }
    keys = list(ok)
    ns = sorted({k[0] for k in keys})
    ms = sorted({k[1] for k in keys})
    m0s = sorted({k[2] for k in keys})
    ks = sorted({k[3] for k in keys})
    lams = sorted({k[4] for k in keys})
    out = []

    def check(name, series, increasing):
        bad = [label for label, vals in series if len(vals) > 1 and not _strict(vals, increasing)]
        out.append(Verdict(name, not bad, "; ".join(bad)))

    if 0.0 in lams and len(ks) > 1:
        series = []
        for n, m, m0 in itertools.product(ns, ms, m0s):
            vals = [ok[(n, m, m0, k, 0.0)] for k in ks if (n, m, m0, k, 0.0) in ok]
            series.append((f"n={n} m={m} m0={m0}", vals))
        check("indicator strictly decreasing in k", series, increasing=False)
    if 0.0 in lams and len(m0s) > 1:
        series = []
        for n, m, k in itertools.product(ns, ms, ks):
            vals = [ok[(n, m, m0, k, 0.0)] for m0 in m0s if (n, m, m0, k, 0.0) in ok]
            series.append((f"n={n} m={m} k={k:g}", vals))
        check("indicator strictly increasing in m0", series, increasing=True)
    if len(lams) > 1:
        series = []
        for n, m, m0, k in itertools.product(ns, ms, m0s, ks):
            vals = [ok[(n, m, m0, k, lam)] for lam in lams if (n, m, m0, k, lam) in ok]
            series.append((f"n={n} m={m} m0={m0} k={k:g}", vals))
        check("indicator strictly decreasing in lambda", series, increasing=False)
    return out


# ---------------------------------------------------------------------------
# constructed two-hidden-layer discriminator
# ---------------------------------------------------------------------------


@dataclass
class ConstructedDiscriminator:
    W1: np.ndarray  # rows x0, y0
    W2: np.ndarray
    W3: np.ndarray
    b: np.ndarray
    k1: float
    k2: float
    eps: float

    @property
    def n_params(self) -> int:
        return self.W1.size + self.W2.size + self.W3.size + self.b.size

    def __call__(self, v: np.ndarray) -> np.ndarray:
        """D(v) = W3 . s(k2 W2 s(k1 (W1 v - b))) for each row of ``v``."""
        v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        beta = stable_sigmoid(self.k1 * (v @ self.W1.T - self.b))
        gamma = stable_sigmoid(self.k2 * (beta @ self.W2.T))
        return gamma @ self.W3


def _unit(v, name):
    v = np.asarray(v, dtype=np.float64)
    if abs(float(np.linalg.norm(v)) - 1.0) > 1e-9:
        raise ValueError(f"{name} must be unit-norm")
    return v


def build_constructed(
    x0: np.ndarray,
    y0: np.ndarray,
    others: np.ndarray,
    eps: float,
    k1: float,
    k2: float,
) -> ConstructedDiscriminator:
    """Discriminator that singles out x0 (output 1/2 + eps/2) and y0 (1/2 - eps/2).

    Each offset is the midpoint between 1 and the largest inner product of
    its anchor with any other point.
    """
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    x0 = _unit(x0, "x0")
    y0 = _unit(y0, "y0")
    others = np.atleast_2d(np.asarray(others, dtype=np.float64))
    norms = np.linalg.norm(others, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("all dataset points must be unit-norm")
    for anchor, name in ((x0, "x0"), (y0, "y0")):
        if np.any(np.all(others == anchor, axis=1)):
            raise ValueError(f"{name} must not appear among the other points")
    l_x = float(np.max(np.concatenate([others @ x0, [x0 @ y0]])))
    l_y = float(np.max(np.concatenate([others @ y0, [x0 @ y0]])))
    if max(l_x, l_y) >= 1 - 1e-9:
        raise DegenerateError(
            f"largest off-anchor inner product {max(l_x, l_y):.12f} is too close to 1"
        )
    return ConstructedDiscriminator(
        W1=np.stack([x0, y0]),
        W2=np.array([[1.0, -1.0], [-1.0, 1.0]]),
        W3=np.array([0.5 + eps / 2, 0.5 - eps / 2]),
        b=np.array([(1 + l_x) / 2, (1 + l_y) / 2]),
        k1=k1,
        k2=k2,
        eps=eps,
    )


def unit_circle_points(count: int, rng: np.random.Generator) -> np.ndarray:
    ang = rng.uniform(0.0, 2 * np.pi, size=count)
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def isolation(points: np.ndarray) -> np.ndarray:
    """1 - largest inner product of each point with any other point."""
    gram = points @ points.T
    np.fill_diagonal(gram, -np.inf)
    return 1.0 - gram.max(axis=1)


@dataclass
class Prop1Report:
    eps: float
    k1: float
    k2: float
    x0_index: int
    y0_index: int
    max_deviation: float
    objective: float
    baseline: float  # 2 log(1/2)
    n_params: int

    @property
    def boundary(self) -> bool:
        return self.eps == 0

    @property
    def passed(self) -> bool:
        return (
            not self.boundary
            and self.max_deviation <= 1e-3
            and self.objective - self.baseline > 1e-12
        )


def prop1_experiment(
    n: int = 32,
    m: int = 32,
    seed: int = 0,
    eps: float = 0.2,
    k1: float = 1e4,
    k2: float = 1e4,
    reals: Optional[np.ndarray] = None,
    fakes: Optional[np.ndarray] = None,
) -> Prop1Report:
    """Build the constructed discriminator on a unit-norm 2-D dataset and score it.

    x0 is the real point and y0 the fake point farthest (in angle) from
    every other point of the combined set.
    """
    rng = np.random.default_rng(seed)
    if reals is None:
        reals = unit_circle_points(n, rng)
    if fakes is None:
        fakes = unit_circle_points(m, rng)
    pts = np.concatenate([reals, fakes])
    iso = isolation(pts)
    xi = int(np.argmax(iso[: len(reals)]))
    yi = int(np.argmax(iso[len(reals):]))
    if min(iso[xi], iso[len(reals) + yi]) <= 1e-9:
        raise DegenerateError("every candidate anchor has a (near) duplicate in the dataset")
    mask = np.ones(len(pts), dtype=bool)
    mask[[xi, len(reals) + yi]] = False
    disc = build_constructed(reals[xi], fakes[yi], pts[mask], eps, k1, k2)
    d_real, d_fake = disc(reals), disc(fakes)
    target_real = np.full(len(reals), 0.5)
    target_fake = np.full(len(fakes), 0.5)
    target_real[xi] = 0.5 + eps / 2
    target_fake[yi] = 0.5 - eps / 2
    dev = max(float(np.max(np.abs(d_real - target_real))), float(np.max(np.abs(d_fake - target_fake))))
    floor = 1e-12
    objective = float(
        np.mean(np.log(np.maximum(floor, d_real))) + np.mean(np.log(np.maximum(floor, 1 - d_fake)))
    )
    return Prop1Report(eps, k1, k2, xi, yi, dev, objective, 2 * math.log(0.5), disc.n_params)
