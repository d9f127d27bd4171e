"""Evaluation of the discrete free-energy functionals.

Two dual objective forms are evaluated over a discrete path:

* ``eval_parisi`` -- the Lagrange-multiplier form, a function of
  (Lambda, x, Q_1..Q_{r-1});
* ``eval_cs``     -- the multiplier-free Crisanti-Sommers form, a function
  of (x, Q_1..Q_{r-1}) alone.

Both can be perturbed by the log-det barrier
``B(Q) = -sum_k log|Q_{k+1} - Q_k| >= 0`` which blows up on degenerate
increments, keeping minimizers strictly interior.  At interior critical
points of a perturbed functional the two forms coincide through explicit
correction terms built from the matrices E_p and their weighted tails
Ebar_p; ``eval_approx`` evaluates those corrected forms.

Conventions: a level with x_k = 0 contributes nothing to the 1/x_k
log-ratio terms (the corresponding chain increment is then zero), and
correction inner products are accumulated in a fixed order so repeated
runs are bitwise reproducible.

Epsilon convention: ``eval_perturbed`` adds the barrier un-halved,
``base + eps * B``, while the bracketed functional forms carry a global
factor 1/2.  Written inside the bracket, the perturbed objective is
therefore ``(1/2)[... - 2 eps sum_k log|Q_{k+1} - Q_k|]``, so every
correction quantity derived from its critical points (E tails, corrected
chains, tilde shifts, barrier gradient terms) carries ``2 * eps`` where
the half-barrier form would carry ``eps``.  The helper
:func:`corrected_eps` centralizes that factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateIncrement,
    InfeasiblePath,
    NonStrictWeights,
    NotPositiveDefinite,
)
from .matcore import (
    MixtureSpec,
    chol_logdet,
    frobenius,
    frozen,
    hadamard_div,
    sum_entries,
    sym_inverse,
)
from .path import DiscretePath, DSequence, MultiplierState, d_sequence, lambda_sequence


def corrected_eps(eps: float) -> float:
    """Epsilon as seen by the half-bracketed functional forms (see module doc)."""
    return 2.0 * eps


def eval_parisi(lam: np.ndarray, path: DiscretePath, mix: MixtureSpec) -> float:
    """Multiplier-form functional.

    0.5 [ <hh^T, L1^-1> + <Lambda, Q> - n - log|Lambda|
          + sum_k (1/x_k) log(|L_{k+1}|/|L_k|) + <xi'(Q_1), L1^-1>
          - sum_k x_k Sum(theta(Q_{k+1}) - theta(Q_k)) ]
    """
    state = lambda_sequence(lam, path, mix)
    return _parisi_from_state(state, path, mix)


def _parisi_from_state(state: MultiplierState, path: DiscretePath, mix: MixtureSpec) -> float:
    lam = state.lam
    n = path.n
    first_inv = sym_inverse(state.at(1))
    total = frobenius(mix.outer_field(), first_inv)
    total += frobenius(lam, path.constraint)
    total -= n
    total -= chol_logdet(lam)
    logdets = [chol_logdet(m) for m in state.seq]
    for k in range(1, path.r):
        if path.x[k] == 0.0:
            continue  # then Lambda_{k+1} = Lambda_k and the ratio is 1
        total += (logdets[k] - logdets[k - 1]) / path.x[k]
    total += frobenius(mix.xi_prime(path.level(1)), first_inv)
    theta_sums = [sum_entries(mix.theta(path.level(k))) for k in range(path.r + 1)]
    for k in range(1, path.r):
        total -= path.x[k] * (theta_sums[k + 1] - theta_sums[k])
    return 0.5 * total


def eval_cs(path: DiscretePath, mix: MixtureSpec) -> float:
    """Multiplier-free functional.

    0.5 [ <hh^T, D_1> + (1/x_{r-1}) log|Q - Q_{r-1}|
          - sum_{k<=r-2} (1/x_k) log(|D_{k+1}|/|D_k|) + <Q_1, D_1^-1>
          + sum_k x_k Sum(xi(Q_{k+1}) - xi(Q_k)) ]
    """
    if path.r < 2:
        raise InfeasiblePath("the multiplier-free form needs r >= 2")
    if path.x[-1] <= 0.0:
        raise InfeasiblePath("x_{r-1} must be positive")
    dseq = d_sequence(path)
    try:
        top_logdet = chol_logdet(path.constraint - path.level(path.r - 1))
        d_logdets = [chol_logdet(m) for m in dseq.seq]
        d1_inv = sym_inverse(dseq.at(1))
    except NotPositiveDefinite as exc:
        raise InfeasiblePath(str(exc)) from exc
    total = frobenius(mix.outer_field(), dseq.at(1))
    total += top_logdet / path.x[-1]
    for k in range(1, path.r - 1):
        if path.x[k] == 0.0:
            continue  # then D_{k+1} = D_k and the ratio is 1
        total -= (d_logdets[k] - d_logdets[k - 1]) / path.x[k]
    total += frobenius(path.level(1), d1_inv)
    xi_sums = [sum_entries(mix.xi(path.level(k))) for k in range(path.r + 1)]
    for k in range(1, path.r):
        total += path.x[k] * (xi_sums[k + 1] - xi_sums[k])
    return 0.5 * total


def eval_barrier(path: DiscretePath) -> float:
    """-sum_k log|Q_{k+1} - Q_k| >= 0; DegenerateIncrement if any increment fails."""
    total = 0.0
    for k in range(path.r):
        try:
            total -= chol_logdet(path.increment(k))
        except NotPositiveDefinite as exc:
            raise DegenerateIncrement(k, str(exc)) from exc
    return total


def eval_perturbed(
    kind: str,
    eps: float,
    path: DiscretePath,
    mix: MixtureSpec,
    lam: np.ndarray | None = None,
) -> float:
    """Base functional plus eps times the barrier (eps = 0 skips the barrier)."""
    if kind == "parisi":
        if lam is None:
            raise ValueError("the multiplier form needs lam")
        base = eval_parisi(lam, path, mix)
    elif kind == "cs":
        base = eval_cs(path, mix)
    else:
        raise ValueError(f"unknown functional kind {kind!r}")
    if eps == 0.0:
        return base
    return base + eps * eval_barrier(path)


@dataclass(frozen=True)
class ErrorTerms:
    """Correction matrices E_1..E_r (E_r = 0) and tails Ebar_1..Ebar_{r-1}.

    E_p is built from inverse increment gaps around level p; the lower side
    additionally divides entrywise by xi''(Q_p).  The tails satisfy
    Ebar_k - Ebar_{k+1} = x_k (E_{k+1} - E_k).
    """

    side: str
    eps: float
    e: tuple[np.ndarray, ...]
    ebar: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "e", tuple(frozen(m) for m in self.e))
        object.__setattr__(self, "ebar", tuple(frozen(m) for m in self.ebar))

    def e_at(self, p: int) -> np.ndarray:
        """E_p for 1 <= p <= r."""
        return self.e[p - 1]

    def ebar_at(self, p: int) -> np.ndarray:
        """Ebar_p for 1 <= p <= r-1."""
        return self.ebar[p - 1]


def error_terms(
    side: str, path: DiscretePath, mix: MixtureSpec, eps: float = 0.0
) -> ErrorTerms:
    """Correction terms of the perturbed critical-point equations.

    side = "lower":  E_p = ((Q_{p+1}-Q_p)^-1 - (Q_p-Q_{p-1})^-1) / (x_p - x_{p-1})
                     divided entrywise by xi''(Q_p)  (needs beta_2 > 0);
    side = "upper":  the same without the entrywise division.
    """
    if side not in ("lower", "upper"):
        raise ValueError(f"unknown side {side!r}")
    r = path.r
    for p in range(1, r):
        if path.x[p] - path.x[p - 1] <= 0.0:
            raise NonStrictWeights(f"x_{p} - x_{p - 1} = {path.x[p] - path.x[p - 1]}")
    inv_inc = [sym_inverse(path.increment(k)) for k in range(r)]
    e = []
    for p in range(1, r):
        raw = (inv_inc[p] - inv_inc[p - 1]) / (path.x[p] - path.x[p - 1])
        if side == "lower":
            raw = hadamard_div(raw, mix.xi_second(path.level(p)))
        e.append(raw)
    e.append(np.zeros((path.n, path.n)))  # E_r = 0
    ebar = [None] * (r - 1)
    tail = np.zeros((path.n, path.n))
    for p in range(r - 1, 0, -1):
        tail = tail + path.x[p] * (e[p] - e[p - 1])
        ebar[p - 1] = tail
    return ErrorTerms(side=side, eps=float(eps), e=tuple(e), ebar=tuple(ebar))


def d_sequence_eps(dseq: DSequence, err: ErrorTerms, eps: float) -> list[np.ndarray]:
    """D_p(eps) = D_p + eps * Ebar_p for 1 <= p <= r-1."""
    return [dseq.at(p) + eps * err.ebar_at(p) for p in range(1, len(dseq.seq) + 1)]


def lambda_sequence_eps(state: MultiplierState, err: ErrorTerms, eps: float) -> list[np.ndarray]:
    """Lambda_p(eps) = Lambda_p + eps * Ebar_p for 1 <= p <= r (Ebar_r = 0)."""
    r = len(state.seq)
    out = [state.at(p) + eps * err.ebar_at(p) for p in range(1, r)]
    out.append(np.array(state.at(r)))
    return out


def construct_multiplier(path: DiscretePath, mix: MixtureSpec, eps: float) -> np.ndarray:
    """The multiplier matched to a critical point of the perturbed
    multiplier-free functional:

        Lambda = (Q - Q_{r-1})^-1 + xi'(Q) - xi'(Q_{r-1}) + s E_{r-1}

    with upper-side correction terms and s = corrected_eps(eps).
    """
    err = error_terms("upper", path, mix)
    top_inv = sym_inverse(path.constraint - path.level(path.r - 1))
    lam = top_inv + mix.xi_prime(path.constraint) - mix.xi_prime(path.level(path.r - 1))
    return lam + corrected_eps(eps) * err.e_at(path.r - 1)


def eval_approx(
    side: str,
    path: DiscretePath,
    mix: MixtureSpec,
    eps: float,
    lam: np.ndarray | None = None,
    err: ErrorTerms | None = None,
) -> float:
    """Approximate functionals with eps-corrected chains.

    side = "lower": the corrected multiplier-free form (the value the
    multiplier form reduces to at its perturbed critical points);
    side = "upper": the corrected multiplier form (the value the
    multiplier-free form reduces to).  For the upper side ``lam`` defaults
    to :func:`construct_multiplier`.
    """
    if side == "lower":
        return _approx_lower(path, mix, eps, err)
    if side == "upper":
        if lam is None:
            lam = construct_multiplier(path, mix, eps)
        return _approx_upper(lam, path, mix, eps, err)
    raise ValueError(f"unknown side {side!r}")


def _approx_lower(path, mix, eps, err):
    if err is None:
        err = error_terms("lower", path, mix, eps)
    s = corrected_eps(eps)
    r = path.r
    dseq = d_sequence(path)
    d_corr = d_sequence_eps(dseq, err, s)
    d_corr_logdets = [chol_logdet(m) for m in d_corr]
    d_corr_inv = [sym_inverse(m) for m in d_corr]

    def dL(p):
        return d_corr_logdets[p - 1]

    def dI(p):
        return d_corr_inv[p - 1]

    total = frobenius(mix.outer_field(), d_corr[0])
    total += dL(r - 1) / path.x[-1]
    for k in range(1, r - 1):
        total -= (dL(k + 1) - dL(k)) / path.x[k]
    total += frobenius(path.level(1), dI(1))
    xi_sums = [sum_entries(mix.xi(path.level(k))) for k in range(r + 1)]
    for k in range(1, r):
        total += path.x[k] * (xi_sums[k + 1] - xi_sums[k])
    for k in range(1, r - 1):
        total -= s * frobenius(err.ebar_at(k + 1) - err.ebar_at(k), mix.xi_prime(path.level(k + 1)))
    for k in range(1, r - 1):
        total -= (s / path.x[k]) * frobenius(dI(k + 1), err.ebar_at(k) - err.ebar_at(k + 1))
    total -= s * frobenius(dI(r - 1), err.ebar_at(r - 1))
    total += s * frobenius(mix.xi_prime(path.level(r - 1)), err.ebar_at(r - 1))
    total += s * eval_barrier(path)
    return 0.5 * total


def _approx_upper(lam, path, mix, eps, err):
    if err is None:
        err = error_terms("upper", path, mix, eps)
    s = corrected_eps(eps)
    r = path.r
    n = path.n
    state = lambda_sequence(lam, path, mix)
    lam_corr = lambda_sequence_eps(state, err, s)
    lam_corr_logdets = [chol_logdet(m) for m in lam_corr]
    lam_corr_inv = [sym_inverse(m) for m in lam_corr]

    def lL(p):
        return lam_corr_logdets[p - 1]

    def lI(p):
        return lam_corr_inv[p - 1]

    total = frobenius(lam, path.constraint)
    total -= n
    total -= chol_logdet(lam)
    for k in range(1, r):
        total += (lL(k + 1) - lL(k)) / path.x[k]
    total += frobenius(lI(1), mix.outer_field() + mix.xi_prime(path.level(1)))
    theta_sums = [sum_entries(mix.theta(path.level(k))) for k in range(r + 1)]
    for k in range(1, r):
        total -= path.x[k] * (theta_sums[k + 1] - theta_sums[k])
    for k in range(1, r - 1):
        total -= s * frobenius(err.ebar_at(k + 1) - err.ebar_at(k), path.level(k))
    for k in range(1, r - 1):
        total += (s / path.x[k]) * frobenius(lI(k), err.ebar_at(k) - err.ebar_at(k + 1))
    total += s * frobenius(lI(r - 1), err.ebar_at(r - 1))
    total += s * frobenius(path.level(r - 1), err.ebar_at(r - 1))
    total += s * eval_barrier(path)
    return 0.5 * total
