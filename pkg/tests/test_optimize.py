import math

import numpy as np
import pytest

from spinvar.battery import random_correlation
from spinvar.errors import ValidationError
from spinvar.matcore import MixtureSpec
from spinvar.optimize import (
    SolveOptions,
    continuation,
    duality_gap,
    minimize_fixed,
    search,
)


def cs_rs_value(beta):
    """Closed-form single-jump value for the n = 1 pure quadratic mixture."""
    q = 0.0 if 2 * beta**2 <= 1 else 1 - 1 / math.sqrt(2 * beta**2)
    return 0.5 * (math.log(1 - q) + q / (1 - q) + beta**2 * (1 - q * q))


def cs_rs_grid_value(beta, resolution=1e-4):
    best = math.inf
    q = 0.0
    while q < 1.0 - 1e-9:
        best = min(best, 0.5 * (math.log(1 - q) + q / (1 - q) + beta**2 * (1 - q * q)))
        q += resolution
    return best


def test_solve_options_validation():
    with pytest.raises(ValidationError):
        SolveOptions(eps_schedule=(1e-2, 1e-1))  # not decreasing
    with pytest.raises(ValidationError):
        SolveOptions(armijo=(1.5, 0.5))
    with pytest.raises(ValidationError):
        SolveOptions(r_max=1)


def test_minimize_cs_rs_low_temperature():
    mix = MixtureSpec.pure(2, [0.3])
    q = np.array([[1.0]])
    opts = SolveOptions()
    res = minimize_fixed("cs", mix, q, 2, (0.0, 1.0), 1e-6, opts)
    assert res.converged
    q_star = res.path.level(1)[0, 0]
    assert 0 < q_star < 5e-3  # pushed to the boundary as eps shrinks
    assert res.value == pytest.approx(0.045, abs=1e-3)


def test_minimize_cs_interior_minimizer():
    mix = MixtureSpec.pure(2, [1.0])
    q = np.array([[1.0]])
    opts = SolveOptions()
    state = None
    for eps in opts.eps_schedule:
        res = minimize_fixed("cs", mix, q, 2, (0.0, 1.0), eps, opts, start=state)
        state = (res.lam, res.path.free_levels())
    assert res.path.level(1)[0, 0] == pytest.approx(1 - 1 / math.sqrt(2), abs=1e-4)


def test_minimize_parisi_rs():
    mix = MixtureSpec.pure(2, [0.3])
    q = np.array([[1.0]])
    cont = continuation("parisi", mix, q, 2, (0.0, 1.0), SolveOptions())
    assert cont.lam[0, 0] == pytest.approx(1.18, abs=1e-2)
    assert cont.value_at_eps_min == pytest.approx(0.045, abs=1e-4)


def test_iterates_stay_interior():
    mix = MixtureSpec.pure(2, [1.0])
    q = np.array([[1.0]])
    cont = continuation("cs", mix, q, 2, (0.0, 1.0), SolveOptions())
    assert cont.trace, "expected per-iteration trace rows"
    assert all(row.min_increment_eig > 0 for row in cont.trace)


def test_continuation_monotone_and_extrapolation():
    mix = MixtureSpec.pure(2, [0.3])
    q = np.array([[1.0]])
    cont = continuation("cs", mix, q, 2, (0.0, 1.0), SolveOptions())
    bases = [s.value_base for s in cont.stages]
    assert all(a >= b - 1e-9 for a, b in zip(bases, bases[1:]))
    assert cont.value_extrapolated == pytest.approx(0.045, abs=1e-5)
    assert cont.converged


def test_degenerate_mixture_minimum_zero():
    mix = MixtureSpec(n=1, terms=(), h=np.zeros(1))
    q = np.array([[1.0]])
    rep = duality_gap(mix, q, SolveOptions(beta2_delta=0.0))
    assert rep.min_parisi == pytest.approx(0.0, abs=1e-4)
    assert rep.min_cs == pytest.approx(0.0, abs=1e-4)
    assert rep.argmin_parisi.best.lam[0, 0] == pytest.approx(1.0, abs=1e-2)


def test_search_prefers_smaller_r_on_ties():
    mix = MixtureSpec.pure(2, [0.3])
    q = np.array([[1.0]])
    res = search("cs", mix, q, SolveOptions(r_max=3, x_grid=3))
    assert res.r == 2
    assert res.value == pytest.approx(0.045, abs=1e-4)
    tried_r = {r for r, _, _ in res.candidates}
    assert tried_r == {2, 3}


def test_search_nested_spaces():
    mix = MixtureSpec.pure(2, [1.0])
    q = np.array([[1.0]])
    v2 = search("cs", mix, q, SolveOptions(r_max=2)).value
    v3 = search("cs", mix, q, SolveOptions(r_max=3, x_grid=3)).value
    assert v3 <= v2 + 1e-9


def test_search_finds_symmetry_breaking_at_low_temperature():
    # deep mixed instance: a second level with an interior weight pays off,
    # and the two independent optimizers still agree there
    mix = MixtureSpec(n=1, terms=((2, [0.1]), (4, [2.0])), h=[0.0])
    q = np.array([[1.0]])
    v2 = search("cs", mix, q, SolveOptions(r_max=2)).value
    rep = duality_gap(mix, q, SolveOptions(r_max=3, x_grid=8))
    assert rep.min_cs < v2 - 0.1
    assert rep.argmin_cs.r == 3
    assert 0.0 < rep.argmin_cs.x[1] < 1.0
    assert rep.gap <= 1e-4


def test_gap_scalar_instances():
    q = np.array([[1.0]])
    for beta in (0.3, 1.0):
        rep = duality_gap(MixtureSpec.pure(2, [beta]), q, SolveOptions())
        assert rep.gap <= 1e-4
        assert rep.min_cs == pytest.approx(cs_rs_value(beta), abs=1e-4)


def test_gap_applies_beta2_floor():
    mix = MixtureSpec.pure(4, [0.5])
    q = np.array([[1.0]])
    rep = duality_gap(mix, q, SolveOptions())
    assert rep.beta2_delta_applied == pytest.approx(1e-4)
    assert rep.continuity_band == pytest.approx(1e-8)
    assert rep.gap <= 1e-4


def test_diagonal_separability_identity():
    # on diagonal data the functionals split into species sums exactly
    from spinvar.functionals import eval_cs, eval_parisi
    from spinvar.path import DiscretePath

    rng = np.random.default_rng(41)
    for _ in range(20):
        d1, d2 = rng.uniform(0.1, 0.9, 2)
        mix = MixtureSpec(n=2, terms=((2, rng.uniform(0.2, 0.8, 2)),), h=rng.uniform(-0.4, 0.4, 2))
        path = DiscretePath(
            (0.0, 1.0), (np.diag([d1, d2]), np.eye(2))
        )
        lam = np.diag(rng.uniform(2.5, 4.0, 2))
        total_p = 0.0
        total_c = 0.0
        for j in range(2):
            sp = DiscretePath((0.0, 1.0), (np.array([[path.level(1)[j, j]]]), np.eye(1)))
            total_p += eval_parisi(np.array([[lam[j, j]]]), sp, mix.species(j))
            total_c += eval_cs(sp, mix.species(j))
        assert eval_parisi(lam, path, mix) == pytest.approx(total_p, abs=1e-12)
        assert eval_cs(path, mix) == pytest.approx(total_c, abs=1e-12)


def test_minimize_diag_only_stays_diagonal():
    mix = MixtureSpec(n=2, terms=((2, np.array([0.3, 0.5])),), h=np.zeros(2))
    q = np.eye(2)
    res = minimize_fixed("cs", mix, q, 2, (0.0, 1.0), 1e-3, SolveOptions(), diag_only=True)
    level = res.path.level(1)
    assert abs(level[0, 1]) < 1e-14


def test_gap_random_family_robustness():
    # broader than the acceptance family: quartic terms, fields, varied
    # conditioning, and an occasional weight sweep
    rng = np.random.default_rng(123)
    for _ in range(8):
        n = int(rng.integers(1, 4))
        terms = [(2, rng.uniform(0.1, 0.8, n))]
        if rng.uniform() < 0.6:
            terms.append((4, rng.uniform(0.0, 1.5, n)))
        h = rng.uniform(-0.5, 0.5, n) * (rng.uniform() < 0.6)
        mix = MixtureSpec(n=n, terms=tuple(terms), h=h)
        q = random_correlation(rng, n, jitter=float(rng.uniform(0.1, 0.6)))
        r_max = 3 if rng.uniform() < 0.3 else 2
        rep = duality_gap(mix, q, SolveOptions(r_max=r_max, x_grid=4))
        assert rep.gap <= 5e-4
        assert rep.argmin_parisi.best.converged and rep.argmin_cs.best.converged


def test_no_feasible_start_reported():
    from spinvar.errors import NoFeasibleStart

    mix = MixtureSpec.pure(2, [1.0])
    q = np.array([[1.0]])
    # a warm start outside the multiplier domain must be rejected, not
    # silently repaired
    broken = (np.array([[0.1]]), [np.array([[0.5]])])
    with pytest.raises(NoFeasibleStart):
        minimize_fixed("parisi", mix, q, 2, (0.0, 1.0), 1e-2, SolveOptions(), start=broken)


def test_determinism():
    rng = np.random.default_rng(42)
    q = random_correlation(rng, 2)
    mix = MixtureSpec(n=2, terms=((2, np.array([0.4, 0.3])),), h=np.array([0.1, 0.0]))
    r1 = duality_gap(mix, q, SolveOptions())
    r2 = duality_gap(mix, q, SolveOptions())
    assert r1.min_parisi == r2.min_parisi
    assert r1.min_cs == r2.min_cs
    np.testing.assert_array_equal(r1.argmin_cs.best.path.level(1), r2.argmin_cs.best.path.level(1))
