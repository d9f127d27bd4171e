"""Discrete order-parameter paths and the derived matrix chains.

A discrete path is the pair of sequences

    0 = x_0 <= x_1 <= ... <= x_{r-1} <= 1
    0 = Q_0 <= Q_1 <= ... <= Q_{r-1} <= Q_r = Q

with PSD-ordered matrix levels.  Q_0 = 0 is implicit and Q_r is the
constraint; only Q_1 .. Q_{r-1} are free in any optimization.  From a path
and a mixture two chains are derived:

    Lambda_p = Lambda - sum_{p <= k <= r-1} x_k (xi'(Q_{k+1}) - xi'(Q_k))
    D_p      =          sum_{p <= k <= r-1} x_k (Q_{k+1} - Q_k)

for 1 <= p <= r-1 (and Lambda_r = Lambda).  Both telescope:
Lambda_{k+1} - Lambda_k = x_k (xi'(Q_{k+1}) - xi'(Q_k)) and
D_k - D_{k+1} = x_k (Q_{k+1} - Q_k).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    InfeasibleMultiplier,
    InfeasiblePath,
    ValidationError,
)
from .matcore import MixtureSpec, frozen, psd_tol, spectral_floor, symmetrize


@dataclass(frozen=True)
class DiscretePath:
    """Weights x_0..x_{r-1} paired with matrix levels Q_1..Q_r."""

    x: tuple[float, ...]
    qs: tuple[np.ndarray, ...]

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        if len(x) < 1:
            raise ValidationError("a path needs at least one weight (r >= 1)")
        qs = tuple(frozen(symmetrize(np.asarray(q, dtype=float))) for q in self.qs)
        if len(qs) != len(x):
            raise ValidationError(
                f"need as many levels Q_1..Q_r as weights x_0..x_{{r-1}}: "
                f"got {len(qs)} levels for r = {len(x)}"
            )
        n = qs[0].shape[0]
        for q in qs:
            if q.shape != (n, n):
                raise DimensionMismatch("all levels must share one dimension")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "qs", qs)

    @property
    def r(self) -> int:
        return len(self.x)

    @property
    def n(self) -> int:
        return self.qs[0].shape[0]

    @property
    def constraint(self) -> np.ndarray:
        return self.qs[-1]

    @property
    def last_weight_one(self) -> bool:
        return self.x[-1] == 1.0

    def level(self, k: int) -> np.ndarray:
        """Q_k for 0 <= k <= r, with Q_0 the zero matrix."""
        if k == 0:
            return np.zeros((self.n, self.n))
        return self.qs[k - 1]

    def increment(self, k: int) -> np.ndarray:
        """Q_{k+1} - Q_k for 0 <= k <= r-1."""
        return self.level(k + 1) - self.level(k)

    def with_levels(self, levels) -> "DiscretePath":
        """Replace the free levels Q_1..Q_{r-1}, keeping x and the constraint."""
        if len(levels) != self.r - 1:
            raise ValidationError(f"expected {self.r - 1} free levels, got {len(levels)}")
        return DiscretePath(self.x, tuple(levels) + (self.constraint,))

    def free_levels(self) -> list[np.ndarray]:
        return [np.array(q) for q in self.qs[:-1]]


def equally_spaced(constraint: np.ndarray, r: int, x=None) -> DiscretePath:
    """The deterministic start Q_k = (k/r) Q with the given weights."""
    q = symmetrize(np.asarray(constraint, dtype=float))
    qs = tuple((k / r) * q for k in range(1, r + 1))
    if x is None:
        x = tuple(k / (r - 1) for k in range(r)) if r > 1 else (0.0,)
    return DiscretePath(tuple(x), qs)


def validate(path: DiscretePath, constraint: np.ndarray | None = None) -> list[str]:
    """Diagnostic report: every violated invariant with index and margin."""
    problems = []
    x = path.x
    if x[0] != 0.0:
        problems.append(f"x_0 must be 0, got {x[0]}")
    for k in range(1, path.r):
        if x[k] < x[k - 1]:
            problems.append(f"weights must be nondecreasing: x_{k} = {x[k]} < x_{k-1} = {x[k-1]}")
    if x[-1] > 1.0:
        problems.append(f"x_{{r-1}} must be <= 1, got {x[-1]}")
    if not all(np.isfinite(v) for v in x):
        problems.append("weights must be finite")
    for k in range(path.r):
        inc = path.increment(k)
        floor = spectral_floor(inc)
        if floor < -psd_tol(inc):
            problems.append(
                f"increment Q_{k + 1} - Q_{k} is not PSD: lam_min = {floor:.6e}"
            )
    for k, q in enumerate(path.qs, start=1):
        if not np.all(np.isfinite(q)):
            problems.append(f"level Q_{k} has non-finite entries")
    if constraint is not None:
        constraint = np.asarray(constraint, dtype=float)
        if constraint.shape != path.constraint.shape or not np.array_equal(
            path.constraint, symmetrize(constraint)
        ):
            problems.append("Q_r does not equal the constraint matrix entrywise")
    return problems


def assert_valid(path: DiscretePath, constraint: np.ndarray | None = None):
    problems = validate(path, constraint)
    if problems:
        raise ValidationError(problems)


@dataclass(frozen=True)
class MultiplierState:
    """A multiplier Lambda with its derived chain Lambda_1..Lambda_r."""

    lam: np.ndarray
    seq: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "lam", frozen(symmetrize(np.asarray(self.lam, dtype=float))))
        object.__setattr__(self, "seq", tuple(frozen(m) for m in self.seq))

    def at(self, p: int) -> np.ndarray:
        """Lambda_p for 1 <= p <= r."""
        return self.seq[p - 1]


@dataclass(frozen=True)
class DSequence:
    """The chain D_1..D_{r-1} of weighted tail sums of path increments."""

    seq: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "seq", tuple(frozen(m) for m in self.seq))

    def at(self, p: int) -> np.ndarray:
        """D_p for 1 <= p <= r-1."""
        return self.seq[p - 1]


def lambda_sequence(lam: np.ndarray, path: DiscretePath, mix: MixtureSpec) -> MultiplierState:
    """Derive Lambda_1..Lambda_r; raises InfeasibleMultiplier unless Lambda_1 > 0."""
    lam = symmetrize(np.asarray(lam, dtype=float))
    if lam.shape != (path.n, path.n):
        raise DimensionMismatch("multiplier dimension does not match the path")
    xi_prime = [mix.xi_prime(path.level(k)) for k in range(path.r + 1)]
    seq = [lam for _ in range(path.r)]
    tail = np.zeros_like(lam)
    # walk p = r-1 down to 1 accumulating x_k (xi'(Q_{k+1}) - xi'(Q_k))
    for p in range(path.r - 1, 0, -1):
        tail = tail + path.x[p] * (xi_prime[p + 1] - xi_prime[p])
        seq[p - 1] = lam - tail
    state = MultiplierState(lam, tuple(seq))
    first = state.at(1)
    if spectral_floor(first) <= psd_tol(first):
        raise InfeasibleMultiplier(
            f"Lambda_1 is not positive definite: lam_min = {spectral_floor(first):.6e}"
        )
    return state


def d_sequence(path: DiscretePath) -> DSequence:
    """Derive D_1..D_{r-1}; raises InfeasiblePath unless D_{r-1} > 0."""
    if path.r < 2:
        raise InfeasiblePath("D sequence needs r >= 2")
    seq = [None] * (path.r - 1)
    tail = np.zeros((path.n, path.n))
    for p in range(path.r - 1, 0, -1):
        tail = tail + path.x[p] * path.increment(p)
        seq[p - 1] = tail
    top = seq[-1]
    if spectral_floor(top) <= psd_tol(top):
        raise InfeasiblePath(
            f"D_{{r-1}} is not positive definite: lam_min = {spectral_floor(top):.6e}"
        )
    return DSequence(tuple(seq))


def merge_duplicates(path: DiscretePath, tol: float = 0.0) -> DiscretePath:
    """Canonical path with repeated weights / repeated levels merged out.

    When x_k = x_{k+1} the pair (x_{k+1}, Q_{k+1}) is dropped; when
    Q_k = Q_{k+1} (k >= 1) the pair (x_k, Q_k) is dropped.  Either removal
    leaves both functionals unchanged.  A level with Q_1 = 0 and x_1 > 0 is
    a genuine atom at the origin and is kept.
    """
    x = list(path.x)
    qs = [path.level(k) for k in range(path.r + 1)]  # Q_0..Q_r
    changed = True
    while changed and len(x) > 1:
        changed = False
        for j in range(1, len(x)):
            if abs(x[j] - x[j - 1]) <= tol:
                del x[j]
                del qs[j]
                changed = True
                break
        if changed:
            continue
        for j in range(1, len(x)):
            if float(np.max(np.abs(qs[j + 1] - qs[j]))) <= tol:
                del x[j]
                del qs[j]
                changed = True
                break
    return DiscretePath(tuple(x), tuple(qs[1:]))
