"""Shared test oracles: brute-force references kept independent of the
implementation paths they check."""

import itertools

import numpy as np

from fimlab.estimators import ProbeVector, hutchinson_fim
from fimlab.network import NetworkSpec, init_params


def charpoly_eigs(M: np.ndarray) -> np.ndarray:
    """Eigenvalues as roots of the characteristic polynomial, ascending.

    Deliberately avoids eigh: np.poly builds det(xI - M) from minors and
    np.roots factors a companion matrix via its own path.
    """
    coeffs = np.poly(M)
    roots = np.roots(coeffs)
    return np.sort(roots.real)


def dirichlet(rng: np.random.Generator, C: int, alpha: float = 1.0) -> np.ndarray:
    return rng.dirichlet(np.full(C, alpha))


def random_instance(rng, layer_sizes=(2, 3), activation="none", n_samples=2, x_scale=1.0):
    """A random (net, theta, X) triple for estimator tests."""
    net = NetworkSpec(tuple(layer_sizes), activation)
    theta = init_params(net, rng)
    X = x_scale * rng.normal(size=(n_samples, net.n_inputs))
    return net, theta, X


def rademacher_probes(shape):
    """All +-1 assignments of the given shape, as ProbeVectors."""
    n = int(np.prod(shape))
    for bits in itertools.product((-1.0, 1.0), repeat=n):
        yield ProbeVector(np.array(bits).reshape(shape), "rademacher")


def enumeration_mean(net, theta, X, variant, storage="dense", **kwargs):
    """Exact expectation of a probe estimator over all Rademacher probes."""
    B = np.atleast_2d(X).shape[0]
    k = kwargs.get("k", 1)
    shape = (B, k) if variant == "lowrank" else (B, net.n_classes)
    acc = None
    count = 0
    for probe in rademacher_probes(shape):
        est = hutchinson_fim(net, theta, X, variant, probe=probe, storage=storage, **kwargs)
        acc = est.values if acc is None else acc + est.values
        count += 1
    return acc / count


def enumeration_diag_moments(net, theta, X, variant, **kwargs):
    """Exact per-coordinate mean and variance of the diagonal estimate."""
    B = np.atleast_2d(X).shape[0]
    k = kwargs.get("k", 1)
    shape = (B, k) if variant == "lowrank" else (B, net.n_classes)
    draws = []
    for probe in rademacher_probes(shape):
        est = hutchinson_fim(net, theta, X, variant, probe=probe, storage="diagonal", **kwargs)
        draws.append(est.values)
    draws = np.array(draws)
    return draws.mean(axis=0), draws.var(axis=0)  # population variance: probes equiprobable
