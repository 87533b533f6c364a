import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fimlab.simplex import (
    EmpiricalFim,
    ProbVector,
    diag_weight_fim,
    empirical_fim_variance,
    empirical_simplex_fim,
    envelope_errors,
    hypercube_fim,
    lambda_max_bracket,
    order_stats,
    simplex_fim,
    spectrum,
    top_eigenpair,
)

from helpers import charpoly_eigs, dirichlet


def probs(C, min_mass=1e-3):
    """Hypothesis strategy: a valid probability vector of length C."""
    return arrays(
        np.float64, (C,), elements=st.floats(min_value=min_mass, max_value=1.0)
    ).map(lambda v: v / v.sum())


# --- construction and validation -------------------------------------------


def test_simplex_fim_binary_symmetric():
    f = simplex_fim([0.5, 0.5])
    assert np.allclose(f.matrix, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)


def test_simplex_fim_uniform_three():
    f = simplex_fim([1 / 3, 1 / 3, 1 / 3])
    assert np.allclose(np.diag(f.matrix), 2 / 9, atol=1e-15)
    off = f.matrix[~np.eye(3, dtype=bool)]
    assert np.allclose(off, -1 / 9, atol=1e-15)


def test_simplex_fim_hand_evaluated():
    # diag(p) - p p^T at p = (0.25, 0.75), entry by entry
    f = simplex_fim([0.25, 0.75])
    expected = np.array([[0.25 - 0.0625, -0.1875], [-0.1875, 0.75 - 0.5625]])
    assert np.array_equal(f.matrix, expected)


@pytest.mark.parametrize(
    "bad", [[0.5, 0.6], [-0.1, 1.1], [0.5, 0.5, 0.1], [1.0], [0.3, np.nan, 0.7]]
)
def test_simplex_rejects_invalid_points(bad):
    with pytest.raises(ValueError):
        simplex_fim(bad)


def test_hypercube_examples():
    assert np.allclose(hypercube_fim([0.5, 0.5]).matrix, np.diag([0.25, 0.25]))
    assert np.allclose(hypercube_fim([0.0, 1.0]).matrix, np.zeros((2, 2)))
    f = hypercube_fim([0.25, 0.75, 0.5])
    assert np.allclose(np.diag(f.matrix), [0.1875, 0.1875, 0.25])
    with pytest.raises(ValueError):
        hypercube_fim([0.5, 1.2])


def test_diag_weight_fim():
    f = diag_weight_fim([0.1, 2.0, 0.0])
    assert f.kind == "diag"
    assert np.array_equal(f.matrix, np.diag([0.1, 2.0, 0.0]))
    with pytest.raises(ValueError):
        diag_weight_fim([0.1, -0.5])


# --- spectrum ----------------------------------------------------------------


def test_spectrum_uniform_three():
    dec = spectrum(simplex_fim([1 / 3, 1 / 3, 1 / 3]))
    assert np.allclose(dec.eigenvalues, [0.0, 1 / 3, 1 / 3], atol=1e-12)
    v1 = dec.eigenvectors[:, 0]
    assert np.allclose(np.abs(v1), 1 / np.sqrt(3), atol=1e-12)


def test_spectrum_binary():
    dec = spectrum(simplex_fim([0.5, 0.5]))
    assert np.allclose(dec.eigenvalues, [0.0, 0.5], atol=1e-14)


def test_spectrum_against_characteristic_polynomial():
    p = np.array([0.1, 0.2, 0.7])
    dec = spectrum(simplex_fim(p))
    ref = charpoly_eigs(np.diag(p) - np.outer(p, p))
    assert np.allclose(dec.eigenvalues, ref, atol=1e-10)
    assert abs(dec.eigenvalues[0]) <= 1e-12
    assert abs(dec.eigenvalues[1] + dec.eigenvalues[2] - 0.46) <= 1e-12


def test_spectrum_rejects_nonsymmetric():
    with pytest.raises(ValueError):
        spectrum(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=60, deadline=None)
@given(probs(4))
def test_spectrum_reconstructs_and_is_orthonormal(p):
    dec = spectrum(simplex_fim(p))
    V = dec.eigenvectors
    assert np.allclose(V @ V.T, np.eye(4), atol=1e-10)
    M = np.diag(p) - np.outer(p, p)
    assert np.linalg.norm(dec.reconstruct() - M) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(probs(5))
def test_simplex_invariants(p):
    dec = spectrum(simplex_fim(p))
    w = dec.eigenvalues
    assert w[0] >= -1e-12  # psd
    assert abs(w[0]) <= 1e-12  # ones direction in the kernel
    assert abs(w.sum() - (1.0 - p @ p)) <= 1e-12  # trace identity


# --- top-eigenvalue bracket ----------------------------------------------------


def test_bracket_binary_tight():
    b = lambda_max_bracket([0.5, 0.5])
    assert b.lower == pytest.approx(0.5, abs=1e-15)
    assert b.upper == pytest.approx(0.5, abs=1e-15)


def test_bracket_uniform_tight():
    b = lambda_max_bracket([1 / 3, 1 / 3, 1 / 3])
    assert b.lower == pytest.approx(1 / 3, abs=1e-15)
    assert b.upper == pytest.approx(1 / 3, abs=1e-15)


def test_bracket_contains_lambda_max():
    p = [0.1, 0.2, 0.7]
    b = lambda_max_bracket(p)
    assert b.lower == pytest.approx(0.23, abs=1e-15)
    assert b.upper == pytest.approx(0.42, abs=1e-15)
    assert b.contains(spectrum(simplex_fim(p)).lambda_max)


def test_bracket_sweep_with_gap_claim():
    rng = np.random.default_rng(11)
    violations = []
    for C in (2, 3, 5, 10):
        for _ in range(200):
            p = dirichlet(rng, C)
            b = lambda_max_bracket(p)
            lam = spectrum(simplex_fim(p)).lambda_max
            assert b.contains(lam)
            q = order_stats(p)
            claim = min(q[-1] - q[-2], float(np.max(p * (1 - p))))
            if b.gap > claim + 1e-12:
                violations.append((C, p))
    # stated without proof upstream; asserted empirically, counterexamples flagged
    assert not violations, f"bracket-gap claim violated on {violations[:3]}"


def test_interlacing_and_envelope_order():
    rng = np.random.default_rng(5)
    for C in (2, 3, 6, 12):
        for _ in range(100):
            p = dirichlet(rng, C)
            dec = spectrum(simplex_fim(p))
            q = order_stats(p)
            w = dec.eigenvalues
            assert w[-2] <= q[-2] + 1e-10 and q[-2] <= w[-1] + 1e-10
            assert w[-1] <= q[-1] + 1e-10
            # diagonal upper envelope and rank-1 lower envelope
            M = np.diag(p) - np.outer(p, p)
            upper_margin = np.linalg.eigvalsh(np.diag(p) - M)[0]
            v = dec.top_vector
            lower_margin = np.linalg.eigvalsh(M - w[-1] * np.outer(v, v))[0]
            assert upper_margin >= -1e-12
            assert lower_margin >= -1e-10


# --- power iteration ------------------------------------------------------------


def test_top_eigenpair_binary():
    lam, v = top_eigenpair([0.5, 0.5], method="power", rng=np.random.default_rng(0))
    assert lam == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(np.abs(v), 1 / np.sqrt(2), atol=1e-12)


def test_top_eigenpair_degenerate_uses_residual():
    p = np.full(3, 1 / 3)
    lam, v = top_eigenpair(p, method="power", rng=np.random.default_rng(1))
    M = np.diag(p) - np.outer(p, p)
    assert lam == pytest.approx(1 / 3, abs=1e-10)
    assert np.linalg.norm(M @ v - lam * v) <= 1e-8


def test_power_budget_matches_full_on_gapped_instances():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 10:
        p = dirichlet(rng, 10)
        dec = spectrum(simplex_fim(p))
        # the fixed default budget needs an eigenvalue ratio away from 1
        if dec.spectral_gap < 0.01 or dec.eigenvalues[-2] / dec.eigenvalues[-1] > 0.55:
            continue
        lam, v = top_eigenpair(p, method="power", rng=rng)
        assert abs(lam - dec.lambda_max) <= 1e-6
        checked += 1


def test_power_with_tolerance_converges_tightly():
    rng = np.random.default_rng(4)
    for _ in range(20):
        p = dirichlet(rng, 8)
        dec = spectrum(simplex_fim(p))
        if dec.spectral_gap < 0.01:
            continue
        lam, _ = top_eigenpair(p, method="power", iters=5000, tol=1e-14, rng=rng)
        assert abs(lam - dec.lambda_max) <= 1e-6


def test_top_eigenpair_full_delegates():
    p = [0.2, 0.3, 0.5]
    lam, v = top_eigenpair(p, method="full")
    dec = spectrum(simplex_fim(p))
    assert lam == dec.lambda_max
    assert np.allclose(v, dec.top_vector)


def test_power_requires_rng_and_budget():
    with pytest.raises(ValueError):
        top_eigenpair([0.5, 0.5], method="power")
    with pytest.raises(ValueError):
        top_eigenpair([0.5, 0.5], method="power", iters=0, rng=np.random.default_rng(0))


# --- envelopes -------------------------------------------------------------------


def test_envelope_binary():
    assert envelope_errors([0.5, 0.5]).diag_error == pytest.approx(0.5, abs=1e-15)


def test_envelope_uniform_floor():
    env = envelope_errors([1 / 3, 1 / 3, 1 / 3])
    assert env.diag_error == pytest.approx(1 / 3, abs=1e-15)


def test_envelope_rank1_bound_near_onehot():
    p = [0.98, 0.01, 0.01]
    env = envelope_errors(p)
    assert env.rank1_error_bound == pytest.approx(0.01, abs=1e-15)
    dec = spectrum(simplex_fim(p))
    realized = np.sqrt(np.sum(dec.eigenvalues[:-1] ** 2))
    assert realized <= env.rank1_error_bound + 1e-12


def test_envelope_random_sweep():
    rng = np.random.default_rng(9)
    for C in (2, 3, 5, 10):
        for _ in range(100):
            p = dirichlet(rng, C)
            env = envelope_errors(p)
            assert env.diag_error == pytest.approx(float(p @ p), abs=1e-12)
            assert env.diag_error >= 1.0 / C - 1e-12
            dec = spectrum(simplex_fim(p))
            realized = np.sqrt(np.sum(dec.eigenvalues[:-1] ** 2))
            assert realized <= env.rank1_error_bound + 1e-10


# --- single-label estimates --------------------------------------------------------


def test_empirical_fim_symmetric_binary_is_exact():
    r = empirical_simplex_fim([0.5, 0.5], 0)
    assert np.allclose(r.matrix, simplex_fim([0.5, 0.5]).matrix, atol=1e-15)


def test_empirical_fim_exhaustive_expectation():
    rng = np.random.default_rng(12)
    for C in (2, 4, 7):
        p = dirichlet(rng, C)
        mean = sum(p[y] * empirical_simplex_fim(p, y).matrix for y in range(C))
        assert np.max(np.abs(mean - simplex_fim(p).matrix)) <= 1e-14


def test_empirical_fim_is_rank_one():
    r = empirical_simplex_fim([0.2, 0.3, 0.5], 1)
    s = np.linalg.svd(r.matrix, compute_uv=False)
    assert s[1] <= 1e-12


def test_empirical_fim_adversarial_floor():
    p = np.array([0.1, 0.2, 0.7])
    y = int(np.argmin(p))  # the least likely label
    err = np.linalg.norm(empirical_simplex_fim(p, y).matrix - simplex_fim(p).matrix)
    floor = 2 * float(p @ p) - 2 * float(np.min(p))
    assert floor == pytest.approx(0.88, abs=1e-15)
    assert err >= floor - 1e-12


def test_empirical_fim_rejects_bad_label():
    with pytest.raises(ValueError):
        empirical_simplex_fim([0.5, 0.5], 2)
    with pytest.raises(ValueError):
        empirical_simplex_fim([0.5, 0.5], -1)


# --- label variance ------------------------------------------------------------------


def test_variance_fair_coin_diagonal_is_zero():
    var = empirical_fim_variance([0.5, 0.5])
    assert var[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert var[0, 1] == pytest.approx(0.0, abs=1e-15)


def test_variance_hand_value():
    var = empirical_fim_variance([0.25, 0.75])
    assert var[0, 0] == pytest.approx(0.046875, abs=1e-15)


def test_variance_matches_exhaustive():
    rng = np.random.default_rng(21)
    for C in (2, 3, 6, 10):
        for _ in range(30):
            p = dirichlet(rng, C)
            fim = simplex_fim(p).matrix
            exhaustive = sum(
                p[y] * (empirical_simplex_fim(p, y).matrix - fim) ** 2 for y in range(C)
            )
            var = empirical_fim_variance(p)
            assert np.max(np.abs(var - exhaustive)) <= 1e-12
            assert np.max(var) <= 1 / 16 + 1e-14


def test_variance_cv_diverges_for_vanishing_mass():
    cvs = []
    for eps in (1e-2, 1e-3, 1e-4, 1e-6):
        p = np.array([eps, 1.0 - eps])
        info = p[0] * (1 - p[0])
        cvs.append(np.sqrt(empirical_fim_variance(p)[0, 0]) / info)
    assert all(a < b for a, b in zip(cvs, cvs[1:]))
    assert cvs[-1] > 100.0


# --- misc --------------------------------------------------------------------------


def test_order_stats_stable_on_ties():
    p = np.array([0.25, 0.5, 0.25])
    q = order_stats(p)
    assert np.array_equal(q, [0.25, 0.25, 0.5])


def test_boundary_probabilities_allowed():
    p = ProbVector(np.array([0.0, 0.3, 0.7]))
    dec = spectrum(simplex_fim(p))
    assert dec.eigenvalues[0] >= -1e-12
    assert abs(dec.eigenvalues.sum() - (1 - p.values @ p.values)) <= 1e-12
    assert lambda_max_bracket(p).contains(dec.lambda_max)


def test_empirical_fim_type_is_frozen():
    r = empirical_simplex_fim([0.5, 0.5], 0)
    assert isinstance(r, EmpiricalFim)
    with pytest.raises(ValueError):
        r.matrix[0, 0] = 5.0
