"""Minimization engine for the two functional forms.

The inner solve works at fixed (r, weights, eps).  The free variables are
the levels Q_1..Q_{r-1} (always) and the multiplier (multiplier form
only).  Each iteration takes one Barzilai-Borwein-scaled descent step
jointly across all free variables along the negative representers,
safeguarded by Armijo backtracking against the eps-perturbed objective;
any step that leaves the domain of the barrier evaluates to +inf and is
rejected, so accepted iterates keep strictly positive-definite
increments.  Near stationarity a damped Newton polish on the first-order
system finishes the job, since line searches cannot certify progress
below the floating-point resolution of the objective.

On top of the inner solve sit: ``continuation`` (a decreasing eps
schedule with warm starts), ``search`` (discrete coordinate descent over
the weight grid, sweeping the level count), and ``duality_gap`` (both
forms minimized independently; their agreement is the certificate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateIncrement,
    InfeasibleMultiplier,
    InfeasiblePath,
    NoFeasibleStart,
    NotPositiveDefinite,
    ValidationError,
)
from .functionals import eval_cs, eval_parisi, eval_perturbed
from .matcore import MixtureSpec, spectral_floor, sym_inverse, symmetrize
from .path import DiscretePath, equally_spaced
from .variation import grad_cs, grad_parisi

_DOMAIN_ERRORS = (
    NotPositiveDefinite,
    InfeasibleMultiplier,
    InfeasiblePath,
    DegenerateIncrement,
)

DEFAULT_EPS_SCHEDULE = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


@dataclass(frozen=True)
class SolveOptions:
    """Knobs for the solver; all fields are file- and flag-settable."""

    eps_schedule: tuple[float, ...] = DEFAULT_EPS_SCHEDULE
    max_iters: int = 20000
    grad_tol: float = 1e-8
    armijo: tuple[float, float] = (1e-4, 0.5)
    x_grid: int = 4
    r_max: int = 2
    seed: int = 0
    beta2_delta: float = 1e-4

    def __post_init__(self):
        problems = []
        sched = tuple(float(e) for e in self.eps_schedule)
        if not sched or any(e <= 0 for e in sched):
            problems.append("eps_schedule must be a nonempty list of positive reals")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            problems.append("eps_schedule must be strictly decreasing")
        if self.max_iters < 1:
            problems.append("max_iters must be >= 1")
        if not (self.grad_tol > 0):
            problems.append("grad_tol must be positive")
        c, shrink = self.armijo
        if not (0 < c < 1 and 0 < shrink < 1):
            problems.append("armijo constants must lie in (0, 1)")
        if self.x_grid < 2:
            problems.append("x_grid must be >= 2")
        if self.r_max < 2:
            problems.append("r_max must be >= 2")
        if self.beta2_delta < 0:
            problems.append("beta2_delta must be nonnegative")
        if problems:
            raise ValidationError(problems)
        object.__setattr__(self, "eps_schedule", sched)
        object.__setattr__(self, "armijo", (float(c), float(shrink)))


@dataclass
class TraceRow:
    stage: int
    eps: float
    iteration: int
    value: float
    grad_norm: float
    min_increment_eig: float

    def as_tuple(self):
        return (
            self.stage,
            self.eps,
            self.iteration,
            self.value,
            self.grad_norm,
            self.min_increment_eig,
        )


@dataclass
class MinimizeResult:
    kind: str
    path: DiscretePath
    lam: np.ndarray | None
    value: float
    grad_norm: float
    iterations: int
    converged: bool


@dataclass
class StageRecord:
    eps: float
    value_perturbed: float
    value_base: float
    grad_norm: float
    iterations: int
    converged: bool


@dataclass
class ContinuationResult:
    kind: str
    path: DiscretePath
    lam: np.ndarray | None
    value_at_eps_min: float
    value_extrapolated: float
    stages: list[StageRecord]
    trace: list[TraceRow]

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.stages)


@dataclass
class SearchResult:
    kind: str
    r: int
    x: tuple[float, ...]
    value: float
    best: ContinuationResult
    candidates: list[tuple[int, tuple[float, ...], float]]


@dataclass
class GapReport:
    min_parisi: float
    min_cs: float
    gap: float
    argmin_parisi: SearchResult
    argmin_cs: SearchResult
    eps_trace: dict
    beta2_delta_applied: float = 0.0
    continuity_band: float = 0.0


class _Blocks:
    """Flattened view of the free blocks of one functional form."""

    def __init__(self, kind, mix, constraint, x, eps, diag_only):
        self.kind = kind
        self.mix = mix
        self.constraint = np.asarray(constraint, dtype=float)
        self.x = tuple(float(v) for v in x)
        self.eps = float(eps)
        self.diag_only = bool(diag_only)
        self.n = self.constraint.shape[0]
        self.r = len(self.x)

    def path_of(self, levels) -> DiscretePath:
        return DiscretePath(self.x, tuple(levels) + (self.constraint,))

    def value(self, lam, levels) -> float:
        try:
            return eval_perturbed(
                self.kind, self.eps, self.path_of(levels), self.mix, lam=lam
            )
        except _DOMAIN_ERRORS:
            return math.inf

    def grads(self, lam, levels):
        """True Frobenius gradients (representers halved) per block."""
        path = self.path_of(levels)
        if self.kind == "parisi":
            bundle = grad_parisi(lam, path, self.mix, self.eps)
            g_lam = 0.5 * bundle.d_lambda
        else:
            bundle = grad_cs(path, self.mix, self.eps)
            g_lam = None
        g_q = [0.5 * g for g in bundle.d_q]
        if self.diag_only:
            g_q = [np.diag(np.diag(g)) for g in g_q]
            if g_lam is not None:
                g_lam = np.diag(np.diag(g_lam))
        return g_lam, g_q


class _BBStep:
    """One descent-direction step with BB scaling and Armijo backtracking.

    When the certifiable decrease c*eta*|g|^2 falls below the floating-point
    resolution of the objective, the full step is accepted as long as the
    value does not rise above that resolution; line searches cannot certify
    progress below it, but the scaled step still contracts near a minimum.
    """

    def __init__(self, c, shrink):
        self.c = c
        self.shrink = shrink
        self.prev_point = None
        self.prev_grad = None
        self.eta = 1e-2

    def propose_eta(self, point, grad):
        if self.prev_point is not None:
            s = point - self.prev_point
            y = grad - self.prev_grad
            sy = float(s @ y)
            yy = float(y @ y)
            if sy > 0 and yy > 0:
                self.eta = min(max(sy / yy, 1e-12), 1e3)
        self.prev_point = point.copy()
        self.prev_grad = grad.copy()
        return self.eta

    def backtrack(self, value_fn, current, point, grad):
        """Return (new_point_vector, new_value, moved)."""
        gg = float(grad @ grad)
        if gg == 0.0:
            return point, current, False
        eta = self.propose_eta(point, grad)
        floor = 8.0 * np.finfo(float).eps * (abs(current) + 1e-3)
        for _ in range(60):
            candidate = point - eta * grad
            new_value = value_fn(candidate)
            required = self.c * eta * gg
            if new_value <= current - required or (
                required < floor and new_value <= current + floor
            ):
                self.eta = eta
                return candidate, new_value, True
            eta *= self.shrink
            if eta < 1e-18:
                break
        return point, current, False


def _pack(mats):
    return np.concatenate([m.reshape(-1) for m in mats])


def _unpack(vec, count, n):
    out = []
    for i in range(count):
        m = vec[i * n * n : (i + 1) * n * n].reshape(n, n)
        out.append(symmetrize(m))
    return out


def _tri_indices(n, diag_only=False):
    if diag_only:
        return [(i, i) for i in range(n)]
    return [(i, j) for i in range(n) for j in range(i, n)]


def _tri_pack(mats, idx):
    return np.array([m[i, j] for m in mats for i, j in idx])


def _tri_unpack(vec, count, n, idx):
    span = len(idx)
    out = []
    for c in range(count):
        m = np.zeros((n, n))
        for k, (i, j) in enumerate(idx):
            m[i, j] = m[j, i] = vec[c * span + k]
        out.append(m)
    return out


def _tri_grad(mats, idx):
    """Derivative w.r.t. the independent upper-triangle coordinates: the
    off-diagonal entries of the Frobenius gradient count twice."""
    return np.array([(1.0 if i == j else 2.0) * m[i, j] for m in mats for i, j in idx])


class _Polisher:
    """Damped Newton on the stationarity system in triangle coordinates.

    The Hessian is a finite difference of the analytic gradient; steps are
    accepted only when they shrink the representer norm and stay feasible,
    so the polish can only improve on the descent phase.
    """

    def __init__(self, blocks, r):
        self.blocks = blocks
        self.r = r
        self.n = blocks.n
        self.count = (1 if blocks.kind == "parisi" else 0) + (r - 1)
        self.idx = _tri_indices(self.n, blocks.diag_only)

    def split(self, mats_vec):
        mats = _tri_unpack(mats_vec, self.count, self.n, self.idx)
        if self.blocks.kind == "parisi":
            return mats[0], mats[1:]
        return None, mats

    def join(self, lam, levels):
        mats = ([lam] if lam is not None else []) + list(levels)
        return _tri_pack(mats, self.idx)

    def grad(self, z):
        lam, levels = self.split(z)
        try:
            g_lam, g_q = self.blocks.grads(lam, levels)
        except _DOMAIN_ERRORS:
            return None
        gmats = ([g_lam] if g_lam is not None else []) + list(g_q)
        return _tri_grad(gmats, self.idx)

    def norm(self, z):
        lam, levels = self.split(z)
        try:
            g_lam, g_q = self.blocks.grads(lam, levels)
        except _DOMAIN_ERRORS:
            return math.inf
        norms = [float(np.max(np.abs(g))) for g in g_q]
        if g_lam is not None:
            norms.append(float(np.max(np.abs(g_lam))))
        return 2.0 * max(norms)

    def polish(self, lam, levels, grad_tol, rounds=12):
        z = self.join(lam, levels)
        current = self.norm(z)
        dim = z.size
        for _ in range(rounds):
            if current <= grad_tol:
                break
            g = self.grad(z)
            if g is None:
                break
            hess = np.zeros((dim, dim))
            step = 1e-7 * max(1.0, float(np.max(np.abs(z))))
            for k in range(dim):
                probe = z.copy()
                probe[k] += step
                gp = self.grad(probe)
                if gp is None:
                    probe[k] = z[k] - step
                    gp = self.grad(probe)
                    if gp is None:
                        return self.split(z), current
                    hess[:, k] = (g - gp) / step
                else:
                    hess[:, k] = (gp - g) / step
            hess = 0.5 * (hess + hess.T)
            moved = False
            for mu in (0.0, 1e-10, 1e-6, 1e-2):
                try:
                    direction = np.linalg.solve(hess + mu * np.eye(dim), -g)
                except np.linalg.LinAlgError:
                    continue
                alpha = 1.0
                for _ in range(8):
                    trial = z + alpha * direction
                    trial_norm = self.norm(trial)
                    if trial_norm < 0.5 * current:
                        z, current, moved = trial, trial_norm, True
                        break
                    alpha *= 0.25
                if moved:
                    break
            if not moved:
                break
        return self.split(z), current


def default_start(kind, mix, constraint, r, x):
    """Deterministic feasible start: equally spaced levels, and for the
    multiplier form Lambda = Q^-1 + xi'(Q) doubled until Lambda_1 is PD."""
    path = equally_spaced(constraint, r, x)
    levels = path.free_levels()
    lam = None
    if kind == "parisi":
        q = np.asarray(constraint, dtype=float)
        lam = sym_inverse(q) + mix.xi_prime(q)
        for _ in range(64):
            try:
                eval_parisi(lam, path, mix)
                break
            except InfeasibleMultiplier:
                lam = 2.0 * lam
        else:
            raise NoFeasibleStart("could not scale the multiplier into feasibility")
    return lam, levels


def minimize_fixed(
    kind: str,
    mix: MixtureSpec,
    constraint: np.ndarray,
    r: int,
    x,
    eps: float,
    opts: SolveOptions,
    start=None,
    diag_only: bool = False,
    trace: list | None = None,
    stage: int = 0,
) -> MinimizeResult:
    """First-order stationary point of the eps-perturbed functional at
    fixed weights; returns the best iterate flagged unconverged when the
    iteration budget runs out."""
    if kind not in ("parisi", "cs"):
        raise ValueError(f"unknown functional kind {kind!r}")
    blocks = _Blocks(kind, mix, constraint, x, eps, diag_only)
    n = blocks.n
    if start is None:
        lam, levels = default_start(kind, mix, constraint, r, x)
    else:
        lam, levels = start
        lam = None if lam is None else np.array(lam, dtype=float)
        levels = [np.array(m, dtype=float) for m in levels]
    value = blocks.value(lam, levels)
    if not np.isfinite(value):
        raise NoFeasibleStart(f"starting point infeasible for {kind} at eps={eps}")

    stepper = _BBStep(*opts.armijo)
    polisher = _Polisher(blocks, r)
    polish_budget = 3
    grad_norm = math.inf
    iterations = 0
    converged = False
    best_norm = math.inf
    last_improvement = 0
    for it in range(opts.max_iters):
        iterations = it + 1
        g_lam, g_q = blocks.grads(lam, levels)
        grad_norm = max(float(np.max(np.abs(g))) for g in g_q) if g_q else 0.0
        if g_lam is not None:
            grad_norm = max(grad_norm, float(np.max(np.abs(g_lam))))
        grad_norm *= 2.0  # report representer norms, not halved gradients
        if trace is not None:
            trace.append(
                TraceRow(
                    stage=stage,
                    eps=eps,
                    iteration=it,
                    value=value,
                    grad_norm=grad_norm,
                    min_increment_eig=_min_increment_eig(blocks.path_of(levels)),
                )
            )
        if grad_norm <= opts.grad_tol:
            converged = True
            break
        if grad_norm < 0.5 * best_norm:
            best_norm = grad_norm
            last_improvement = it
        plateaued = it - last_improvement > 200
        if polish_budget > 0 and (plateaued or (grad_norm <= 1e-4 and polish_budget == 3)):
            # endgame: damped Newton on the stationarity system
            polish_budget -= 1
            (lam_p, levels_p), polished_norm = polisher.polish(lam, levels, opts.grad_tol)
            if polished_norm < grad_norm:
                lam, levels = lam_p, levels_p
                value = blocks.value(lam, levels)
                best_norm = polished_norm
                last_improvement = it
                continue
        if plateaued:
            break  # representer norm has plateaued above tolerance

        # one joint step across all free blocks
        if kind == "parisi":
            point = np.concatenate([lam.reshape(-1), _pack(levels)]) if g_q else lam.reshape(-1)
            grad_vec = np.concatenate([g_lam.reshape(-1), _pack(g_q)]) if g_q else g_lam.reshape(-1)

            def joint_value(vec):
                lm = symmetrize(vec[: n * n].reshape(n, n))
                lv = _unpack(vec[n * n :], r - 1, n) if r > 1 else []
                return blocks.value(lm, lv)

            new_point, new_value, moved = stepper.backtrack(joint_value, value, point, grad_vec)
            if moved:
                lam = symmetrize(new_point[: n * n].reshape(n, n))
                levels = _unpack(new_point[n * n :], r - 1, n) if r > 1 else []
                value = new_value
        else:
            point = _pack(levels)
            grad_vec = _pack(g_q)

            def q_value(vec):
                return blocks.value(None, _unpack(vec, r - 1, n))

            new_point, new_value, moved = stepper.backtrack(q_value, value, point, grad_vec)
            if moved:
                levels = _unpack(new_point, r - 1, n)
                value = new_value
        if not moved:
            # stalled; reset the step memory once, then give up
            if stepper.prev_point is None:
                break
            stepper.prev_point = stepper.prev_grad = None
            stepper.eta = 1e-6

    return MinimizeResult(
        kind=kind,
        path=blocks.path_of(levels),
        lam=None if lam is None else symmetrize(lam),
        value=value,
        grad_norm=grad_norm,
        iterations=iterations,
        converged=converged,
    )


def _min_increment_eig(path: DiscretePath) -> float:
    return min(spectral_floor(path.increment(k)) for k in range(path.r))


def continuation(
    kind: str,
    mix: MixtureSpec,
    constraint: np.ndarray,
    r: int,
    x,
    opts: SolveOptions,
    diag_only: bool = False,
    collect_trace: bool = True,
) -> ContinuationResult:
    """Run the eps schedule with warm starts; report the barrier-stripped
    value at the final stage and its linear-in-eps extrapolation."""
    state = None
    stages: list[StageRecord] = []
    trace: list[TraceRow] = [] if collect_trace else None
    base_values = []
    result = None
    for si, eps in enumerate(opts.eps_schedule):
        result = minimize_fixed(
            kind, mix, constraint, r, x, eps, opts,
            start=state, diag_only=diag_only, trace=trace, stage=si,
        )
        state = (result.lam, result.path.free_levels())
        if kind == "parisi":
            base = eval_parisi(result.lam, result.path, mix)
        else:
            base = eval_cs(result.path, mix)
        base_values.append(base)
        stages.append(
            StageRecord(
                eps=eps,
                value_perturbed=result.value,
                value_base=base,
                grad_norm=result.grad_norm,
                iterations=result.iterations,
                converged=result.converged,
            )
        )
    if len(base_values) >= 2:
        e1, e0 = opts.eps_schedule[-2], opts.eps_schedule[-1]
        v1, v0 = base_values[-2], base_values[-1]
        extrapolated = (e1 * v0 - e0 * v1) / (e1 - e0)
    else:
        extrapolated = base_values[-1]
    return ContinuationResult(
        kind=kind,
        path=result.path,
        lam=result.lam,
        value_at_eps_min=base_values[-1],
        value_extrapolated=extrapolated,
        stages=stages,
        trace=trace if trace is not None else [],
    )


def search(
    kind: str,
    mix: MixtureSpec,
    constraint: np.ndarray,
    opts: SolveOptions,
    diag_only: bool = False,
) -> SearchResult:
    """Sweep r = 2..r_max with discrete coordinate descent over the interior
    weights (x_0 = 0 and x_{r-1} = 1 pinned).  Ties prefer smaller r, then
    lexicographically smaller weights."""
    tie_tol = 1e-9
    best = None
    candidates = []
    memo = {}

    def run(r, interior):
        key = (r, tuple(round(v, 12) for v in interior))
        if key in memo:
            return memo[key]
        x = (0.0,) + tuple(interior) + (1.0,) if r >= 2 else (0.0,)
        cont = continuation(kind, mix, constraint, r, x, opts, diag_only=diag_only)
        memo[key] = cont
        candidates.append((r, x, cont.value_at_eps_min))
        return cont

    for r in range(2, opts.r_max + 1):
        m = r - 2
        if m == 0:
            cont = run(r, ())
            cur = ()
        else:
            cur = tuple((k + 1) / (r - 1) for k in range(m))
            cont = run(r, cur)
            spacing = 1.0 / opts.x_grid
            for refinement in range(3):
                improved = True
                while improved:
                    improved = False
                    for i in range(m):
                        lo = cur[i - 1] if i > 0 else 0.0
                        hi = cur[i + 1] if i + 1 < m else 1.0
                        options = {cur[i] - spacing, cur[i] + spacing}
                        if refinement == 0:
                            options |= {j * spacing for j in range(1, opts.x_grid)}
                        for v in sorted(options):
                            if not (lo < v < hi) or not (0.0 < v < 1.0):
                                continue
                            cand = cur[:i] + (v,) + cur[i + 1 :]
                            if cand == cur:
                                continue
                            trial = run(r, cand)
                            if trial.value_at_eps_min < cont.value_at_eps_min - tie_tol or (
                                abs(trial.value_at_eps_min - cont.value_at_eps_min) <= tie_tol
                                and cand < cur
                            ):
                                cont, cur = trial, cand
                                improved = True
                spacing *= 0.5
        entry = (cont.value_at_eps_min, r, cur, cont)
        if best is None:
            best = entry
        else:
            bv, br, bx, _ = best
            if entry[0] < bv - tie_tol:
                best = entry
            elif abs(entry[0] - bv) <= tie_tol and (r, cur) < (br, bx):
                best = entry
    value, r, interior, cont = best
    return SearchResult(
        kind=kind,
        r=r,
        x=(0.0,) + tuple(interior) + (1.0,),
        value=value,
        best=cont,
        candidates=candidates,
    )


def duality_gap(mix: MixtureSpec, constraint: np.ndarray, opts: SolveOptions) -> GapReport:
    """Minimize both forms independently; their agreement is the certificate.

    When the mixture has no strictly positive p = 2 weights, the working
    mixture gets beta2_delta added entrywise (the lower-side correction
    terms divide by xi''); the induced temperature-continuity band is
    reported alongside.
    """
    work = mix
    delta_applied = 0.0
    band = 0.0
    if not mix.has_positive_beta2() and opts.beta2_delta > 0:
        work = mix.with_beta2_floor(opts.beta2_delta)
        delta_applied = opts.beta2_delta
        band = mix.l1_delta(work)
    sp = search("parisi", work, constraint, opts)
    sc = search("cs", work, constraint, opts)
    return GapReport(
        min_parisi=sp.value,
        min_cs=sc.value,
        gap=abs(sp.value - sc.value),
        argmin_parisi=sp,
        argmin_cs=sc,
        eps_trace={
            "parisi": [s.__dict__ for s in sp.best.stages],
            "cs": [s.__dict__ for s in sc.best.stages],
        },
        beta2_delta_applied=delta_applied,
        continuity_band=band,
    )
