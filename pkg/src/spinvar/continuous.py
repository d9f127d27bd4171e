"""Integral form of the multiplier-free functional and its diagnostics.

The continuous order parameter is a pair (x, Phi): a right-continuous
nondecreasing step function x(t) on [0, n] reaching 1, and a
piecewise-linear monotone matrix path Phi(t) parametrized by its trace
(tr Phi(t) = t, Phi(0) = 0, Phi(n) = Q).  With step cdfs every integral in

    C(x, Phi) = 1/2 ( int_0^n x <xi'(Phi) + hh^T, Phi'> dt
                      + log|Phi(n) - Phi(t_x)|
                      + int_0^{t_x} <Phihat^-1, Phi'> dt )

has a closed form per segment: the mixture integrand is an exact
difference of Sum(xi(.)) values, and on a segment where x is the constant
c > 0 the tail integral is -(1/c) (log|Phihat(b)| - log|Phihat(a)|), since
(d/dt) Phihat = -c Phi' there.  Segments with c = 0 have constant Phihat.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateTrace,
    InfeasiblePath,
    NotPositiveDefinite,
    ValidationError,
)
from .matcore import (
    MixtureSpec,
    chol_logdet,
    frobenius,
    frozen,
    psd_tol,
    spectral_floor,
    sum_entries,
    sym_inverse,
    symmetrize,
)
from .path import DiscretePath, merge_duplicates


@dataclass(frozen=True)
class ContinuousCdf:
    """Right-continuous step cdf on [0, n]: value(t) = v_j on [t_j, t_{j+1}).

    Below the first knot the value is 0; an atom at 0 is expressed by a
    first knot (0, mass).  The last value must be 1.
    """

    knots: tuple[tuple[float, float], ...]

    def __post_init__(self):
        knots = tuple((float(t), float(v)) for t, v in self.knots)
        problems = []
        if not knots:
            problems.append("a cdf needs at least one knot")
        else:
            ts = [t for t, _ in knots]
            vs = [v for _, v in knots]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                problems.append("knot positions must be strictly increasing")
            if any(b < a for a, b in zip(vs, vs[1:])):
                problems.append("knot values must be nondecreasing")
            if vs and (vs[0] < 0.0 or vs[-1] != 1.0):
                problems.append("values must start >= 0 and end at exactly 1")
            if ts and ts[0] < 0.0:
                problems.append("knots must lie in [0, n]")
        if problems:
            raise ValidationError(problems)
        object.__setattr__(self, "knots", knots)

    def value(self, t: float) -> float:
        ts = [k[0] for k in self.knots]
        i = bisect.bisect_right(ts, t) - 1
        if i < 0:
            return 0.0
        return self.knots[i][1]

    @property
    def t_x(self) -> float:
        """Smallest t with value(t) >= 1."""
        for t, v in self.knots:
            if v >= 1.0:
                return t
        return self.knots[-1][0]

    def atoms(self) -> list[tuple[float, float]]:
        """Jump locations and masses of the associated measure."""
        out = []
        prev = 0.0
        for t, v in self.knots:
            if v > prev:
                out.append((t, v - prev))
            prev = v
        return out


@dataclass(frozen=True)
class MatrixPath:
    """Piecewise-linear monotone matrix path parametrized by its trace."""

    knots: tuple[tuple[float, np.ndarray], ...]

    def __post_init__(self):
        knots = tuple((float(t), frozen(symmetrize(np.asarray(m, dtype=float)))) for t, m in self.knots)
        problems = []
        if len(knots) < 2:
            problems.append("a matrix path needs at least two knots")
        else:
            n = knots[0][1].shape[0]
            if any(m.shape != (n, n) for _, m in knots):
                problems.append("all knots must share one dimension")
            ts = [t for t, _ in knots]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                problems.append("knot positions must be strictly increasing")
            for t, m in knots:
                if abs(float(np.trace(m)) - t) > 1e-8 * max(1.0, abs(t)):
                    problems.append(f"tr(Phi({t})) = {float(np.trace(m))} != {t}")
            if float(np.max(np.abs(knots[0][1]))) > 1e-12:
                problems.append("Phi(0) must be the zero matrix")
            for (ta, ma), (tb, mb) in zip(knots, knots[1:]):
                inc = mb - ma
                if spectral_floor(inc) < -psd_tol(inc):
                    problems.append(f"increment on [{ta}, {tb}] is not PSD")
                if float(np.max(np.abs(inc))) > (tb - ta) * (1.0 + 1e-9):
                    problems.append(f"increment on [{ta}, {tb}] is not 1-Lipschitz")
        if problems:
            raise ValidationError(problems)
        object.__setattr__(self, "knots", knots)

    @property
    def n(self) -> int:
        return self.knots[0][1].shape[0]

    @property
    def end(self) -> np.ndarray:
        return self.knots[-1][1]

    @property
    def span(self) -> float:
        return self.knots[-1][0]

    def value(self, t: float) -> np.ndarray:
        ts = [k[0] for k in self.knots]
        if t <= ts[0]:
            return np.array(self.knots[0][1])
        if t >= ts[-1]:
            return np.array(self.knots[-1][1])
        i = bisect.bisect_right(ts, t) - 1
        ta, ma = self.knots[i]
        tb, mb = self.knots[i + 1]
        w = (t - ta) / (tb - ta)
        return (1.0 - w) * ma + w * mb

    def slope(self, i: int) -> np.ndarray:
        """Constant derivative on segment i."""
        ta, ma = self.knots[i]
        tb, mb = self.knots[i + 1]
        return (mb - ma) / (tb - ta)


def _segments(x: ContinuousCdf, phi: MatrixPath):
    """Breakpoints refined so x is constant and Phi is linear on each piece."""
    ts = sorted({t for t, _ in phi.knots} | {t for t, _ in x.knots} | {0.0, phi.span})
    ts = [t for t in ts if 0.0 <= t <= phi.span]
    return list(zip(ts, ts[1:]))


def hat_phi(x: ContinuousCdf, phi: MatrixPath, t: float) -> np.ndarray:
    """Phihat(t) = int_t^n x(s) Phi'(s) ds, exactly on the piecewise structure."""
    total = np.zeros((phi.n, phi.n))
    for a, b in _segments(x, phi):
        if b <= t:
            continue
        lo = max(a, t)
        c = x.value(0.5 * (lo + b))  # x is constant on (a, b)
        if c == 0.0:
            continue
        total += c * (phi.value(b) - phi.value(lo))
    return symmetrize(total)


def eval_cs_continuous(
    x: ContinuousCdf,
    phi: MatrixPath,
    mix: MixtureSpec,
    top: float | None = None,
) -> float:
    """The integral-form functional; ``top`` overrides t_x (must be >= t_x).

    The value does not depend on the override as long as Q - Phi(top) stays
    positive definite.
    """
    t_x = x.t_x if top is None else float(top)
    if top is not None and top < x.t_x:
        raise ValidationError(f"override {top} is below t_x = {x.t_x}")
    q = phi.end
    gap = q - phi.value(t_x)
    try:
        top_logdet = chol_logdet(gap)
    except NotPositiveDefinite as exc:
        raise InfeasiblePath(f"Q - Phi(t_x) is not positive definite: {exc}") from exc

    hh = mix.outer_field()
    mixture_term = 0.0
    for a, b in _segments(x, phi):
        c = x.value(0.5 * (a + b))
        if c == 0.0:
            continue
        pa, pb = phi.value(a), phi.value(b)
        mixture_term += c * (
            sum_entries(mix.xi(pb)) - sum_entries(mix.xi(pa)) + frobenius(hh, pb - pa)
        )

    tail_term = 0.0
    for a, b in _segments(x, phi):
        if a >= t_x:
            break
        b = min(b, t_x)
        if b <= a:
            continue
        c = x.value(0.5 * (a + b))
        if c == 0.0:
            # Phihat is constant on the piece
            tail_term += frobenius(sym_inverse(hat_phi(x, phi, a)), phi.value(b) - phi.value(a))
        else:
            la = chol_logdet(hat_phi(x, phi, a))
            lb = chol_logdet(hat_phi(x, phi, b))
            tail_term -= (lb - la) / c
    return 0.5 * (mixture_term + top_logdet + tail_term)


def from_discrete(path: DiscretePath) -> tuple[ContinuousCdf, MatrixPath]:
    """Step cdf and piecewise-linear path matching a discrete path.

    Knots sit at t_k = tr(Q_k); the cdf takes the value x_k on
    [t_k, t_{k+1}).  Duplicate levels are merged first, and levels that
    are exactly zero fold into a cdf atom at t = 0 (right continuity
    keeps the last weight at a shared knot).  Two levels that share a
    trace but differ as matrices cannot be trace-parametrized.
    """
    if path.x[-1] != 1.0:
        raise ValidationError("the continuous form needs x_{r-1} = 1")
    merged = merge_duplicates(path, tol=0.0)
    traces = [float(np.trace(merged.level(k))) for k in range(merged.r + 1)]
    for k in range(merged.r):
        if traces[k + 1] <= traces[k]:
            if float(np.max(np.abs(merged.increment(k)))) > 0.0:
                raise DegenerateTrace(
                    f"levels {k} and {k + 1} share trace {traces[k]:.6g} but differ"
                )
    phi_knots = []
    for k in range(merged.r + 1):
        if phi_knots and traces[k] == phi_knots[-1][0]:
            continue  # a repeated knot can only be the zero level at t = 0
        phi_knots.append((traces[k], merged.level(k)))
    phi = MatrixPath(tuple(phi_knots))
    cdf_knots = []
    for k in range(merged.r):
        if cdf_knots and traces[k] == cdf_knots[-1][0]:
            cdf_knots[-1] = (traces[k], merged.x[k])
        else:
            cdf_knots.append((traces[k], merged.x[k]))
    cdf = ContinuousCdf(tuple(cdf_knots))
    return cdf, phi


@dataclass(frozen=True)
class FeasibleBox:
    """Enclosure for minimizers: top support atom below T, inverse gap below L."""

    T: float
    L: float


def feasible_box(mix: MixtureSpec, constraint: np.ndarray) -> FeasibleBox:
    """Model-determined enclosure constants.

    With s = <hh^T + xi'(Q), Q> + n - log|Q|:
    T = n - exp(-s)/sqrt(n)  and  L = sqrt(n) exp(s).
    """
    q = symmetrize(np.asarray(constraint, dtype=float))
    n = q.shape[0]
    exponent = (
        frobenius(mix.outer_field() + mix.xi_prime(q), q) + n - chol_logdet(q)
    )
    return FeasibleBox(
        T=n - np.exp(-exponent) / np.sqrt(n),
        L=float(np.sqrt(n) * np.exp(exponent)),
    )


@dataclass(frozen=True)
class SupportAtom:
    t: float
    mass: float
    condition: float
    flagged: bool


@dataclass(frozen=True)
class SupportReport:
    atoms: tuple[SupportAtom, ...]
    grid: tuple[float, ...]
    running_integral: tuple[float, ...]

    @property
    def flagged(self) -> list[SupportAtom]:
        return [a for a in self.atoms if a.flagged]


def support_check(
    x: ContinuousCdf, phi: MatrixPath, mix: MixtureSpec, grid_points: int = 512
) -> SupportReport:
    """Necessary support condition at every atom of the cdf's measure.

    An atom at t must satisfy

        <hh^T + xi'(Q), Q> + 1 - log|Q| + log|Q - Phi(t)| >= 0,

    and atoms maximize f(t) = int_0^t <Psi, Phi'> with
    Psi(t) = hh^T + xi'(Phi(t)) - int_0^t Phihat^-1 Phi' Phihat^-1 ds;
    the running integral is returned on a grid for inspection.
    """
    q = phi.end
    base = frobenius(mix.outer_field() + mix.xi_prime(q), q) + 1.0 - chol_logdet(q)
    atoms = []
    for t, mass in x.atoms():
        cond = base + chol_logdet(q - phi.value(t))
        atoms.append(SupportAtom(t=t, mass=mass, condition=cond, flagged=cond < -1e-12))

    t_x = x.t_x
    pieces = [(a, min(b, t_x)) for a, b in _segments(x, phi) if a < t_x]
    grid = sorted({a for a, _ in pieces} | {t_x} | {
        t_x * i / grid_points for i in range(grid_points + 1)
    })
    hh = mix.outer_field()
    running = [0.0]
    acc_m = np.zeros((phi.n, phi.n))  # int_0^t Phihat^-1 Phi' Phihat^-1
    f_acc = 0.0
    for a, b in zip(grid, grid[1:]):
        c = x.value(0.5 * (a + b))
        pa, pb = phi.value(a), phi.value(b)
        slope = (pb - pa) / (b - a)
        if c == 0.0:
            inv = sym_inverse(hat_phi(x, phi, a))
            m_inc = inv @ (pb - pa) @ inv
        else:
            # d/dt Phihat^-1 = c Phihat^-1 Phi' Phihat^-1 on the piece
            m_inc = (sym_inverse(hat_phi(x, phi, b)) - sym_inverse(hat_phi(x, phi, a))) / c
        psi_mid = hh + mix.xi_prime(phi.value(0.5 * (a + b))) - (acc_m + 0.5 * m_inc)
        f_acc += frobenius(psi_mid, slope) * (b - a)
        acc_m = acc_m + m_inc
        running.append(f_acc)
    return SupportReport(atoms=tuple(atoms), grid=tuple(grid), running_integral=tuple(running))


def cdf_l1_distance(x1: ContinuousCdf, x2: ContinuousCdf, span: float) -> float:
    """int_0^span |x1(t) - x2(t)| dt, exactly on the step structure."""
    ts = sorted({0.0, span} | {t for t, _ in x1.knots} | {t for t, _ in x2.knots})
    total = 0.0
    for a, b in zip(ts, ts[1:]):
        if a >= span:
            break
        mid = 0.5 * (a + min(b, span))
        total += abs(x1.value(mid) - x2.value(mid)) * (min(b, span) - a)
    return total


def path_sup_distance(p1: MatrixPath, p2: MatrixPath) -> float:
    """max entrywise |Phi1 - Phi2| over t; exact on the joint knot set."""
    ts = sorted({t for t, _ in p1.knots} | {t for t, _ in p2.knots})
    return max(float(np.max(np.abs(p1.value(t) - p2.value(t)))) for t in ts)


def lipschitz_bound(mix: MixtureSpec, box: FeasibleBox) -> float:
    """Explicit modulus valid on the box, summed from per-term constants.

    Pieces: n^2 max|hh^T| for the field term, n^2 max|xi'(1)| for the
    mixture term, the log-det chain (log is Lipschitz above the determinant
    floor (sqrt(n) L)^-n, and det is polynomial with entries in [-2, 2]),
    and 4 n^4 L^2 for the inverse-tail integral.
    """
    n = mix.n
    L = box.L
    hh_part = n**2 * float(np.max(np.abs(mix.outer_field())))
    ones = np.ones((n, n))
    xi_part = n**2 * float(np.max(np.abs(mix.xi_prime(ones))))
    det_slope = n * (np.sqrt(n) * 2.0) ** (n - 1) * np.sqrt(n)
    logdet_part = (np.sqrt(n) * L) ** n * det_slope
    tail_part = 4.0 * n**4 * L**2
    return float(hh_part + xi_part + logdet_part + tail_part)


def lipschitz_probe(
    mix: MixtureSpec,
    box: FeasibleBox,
    pairs: list[tuple[ContinuousCdf, MatrixPath]],
    samples: int = 100,
    seed: int = 0,
) -> tuple[float, float]:
    """Empirical modulus over sampled candidate pairs against the bound.

    Ratios |C(p1) - C(p2)| / (|x1 - x2|_1 + |Phi1 - Phi2|_inf) are maximized
    over ``samples`` random index pairs; identical pairs are excluded.
    """
    rng = np.random.default_rng(seed)
    values = [eval_cs_continuous(x, p, mix) for x, p in pairs]
    span = pairs[0][1].span
    empirical = 0.0
    m = len(pairs)
    combos = [(i, j) for i in range(m) for j in range(i + 1, m)]
    if len(combos) > samples:
        idx = rng.choice(len(combos), size=samples, replace=False)
        combos = [combos[int(k)] for k in idx]
    for i, j in combos:
        denom = cdf_l1_distance(pairs[i][0], pairs[j][0], span) + path_sup_distance(
            pairs[i][1], pairs[j][1]
        )
        if denom < 1e-15:
            continue
        empirical = max(empirical, abs(values[i] - values[j]) / denom)
    return empirical, lipschitz_bound(mix, box)
