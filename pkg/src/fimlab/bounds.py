"""Deterministic Loewner-order bounds on the network FIM and their gaps.

For each sample the C x C output FIM is sandwiched between its rank-k top
eigenspace and the diagonal matrix of output probabilities; pulling both
sides through the per-sample Jacobian gives matching bounds on the
dim(theta) x dim(theta) FIM.  This module builds the sandwich, the trace
chain it implies, and the tightness certificates: Frobenius brackets for the
upper-bound and lower-bound gaps, a spectral-norm bound on the empirical-FIM
error valid for every label assignment, and the adversarial-label floor
showing that error cannot be escaped, with the worst label found by
exhaustive search.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .estimators import jacobian_and_logits, _softmax
from .network import NetworkSpec, as_flat
from .simplex import order_stats, simplex_matrix, symeig

__all__ = [
    "BoundPair",
    "TraceBounds",
    "TightnessReport",
    "pullback_bounds",
    "trace_bounds",
    "tightness_report",
    "loewner_margin",
    "spectral_norm",
]

EIGH_DIM_CAP = 512
MARGIN_DIM_CAP = 4096


@dataclass(frozen=True)
class _SampleQuantities:
    J: np.ndarray  # (C, dim)
    p: np.ndarray  # (C,)
    sigma: np.ndarray  # ascending singular values of J
    lam: np.ndarray  # ascending eigenvalues of the output FIM
    V: np.ndarray  # matching eigenvector columns


def _sample_quantities(net: NetworkSpec, theta, X) -> list[_SampleQuantities]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = []
    for x in X:
        J, z = jacobian_and_logits(net, theta, x)
        p = _softmax(z)
        gram_w, _ = symeig(J @ J.T)
        lam, V = symeig(simplex_matrix(p))
        out.append(
            _SampleQuantities(
                J=J, p=p, sigma=np.sqrt(np.maximum(gram_w, 0.0)), lam=lam, V=V
            )
        )
    return out


@dataclass(frozen=True)
class BoundPair:
    """Deterministic sandwich lower <= F <= upper in the Loewner order."""

    lower: np.ndarray
    upper: np.ndarray
    k: int


def pullback_bounds(net: NetworkSpec, theta, X, k: int) -> BoundPair:
    """Rank-k lower bound and diagonal-weight upper bound on the FIM.

    lower = sum_x sum over the k largest eigenpairs of lam_i J^T v_i v_i^T J
    upper = sum_x sum_y p_y (dz_y/dtheta)(dz_y/dtheta)^T

    The lower bound has rank at most k * n_samples and equals the FIM at
    k = C-1 because the remaining eigenvalue is zero.
    """
    C = net.n_classes
    if not 1 <= k <= C - 1:
        raise ValueError(f"rank parameter must be in [1, {C - 1}], got {k}")
    dim = as_flat(theta).size
    lower = np.zeros((dim, dim))
    upper = np.zeros((dim, dim))
    for s in _sample_quantities(net, theta, X):
        top = s.V[:, C - k:]
        proj = (top * s.lam[C - k:]) @ top.T
        lower += s.J.T @ proj @ s.J
        upper += s.J.T @ (s.p[:, None] * s.J)
    return BoundPair(lower=lower, upper=upper, k=k)


class TraceBounds(NamedTuple):
    lower: float
    vn_lower: float
    trace: float
    upper: float


def trace_bounds(net: NetworkSpec, theta, X) -> TraceBounds:
    """Trace chain: sum lam_max sigma_min^2 <= von Neumann pairing <= tr F
    <= sum_y p_y |dz_y/dtheta|^2, summed over samples."""
    return _trace_chain(_sample_quantities(net, theta, X))


def spectral_norm(matrix: np.ndarray, iters: int = 100, rtol: float = 1e-9) -> float:
    """Largest singular value via power iteration on the squared matrix.

    Deterministic: the start vector comes from a fixed-seed generator.  The
    Rayleigh estimate approaches the true norm from below, so callers using
    it on the small side of an inequality stay conservative.
    """
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("spectral_norm expects a square matrix")
    if not np.any(M):
        return 0.0
    M2 = M @ M.T
    v = np.random.default_rng(0).normal(size=M.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = M2 @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        w = M2 @ v
        lam = float(v @ w)
        # residual-based stop: a small Rayleigh step alone can be a plateau
        if float(np.linalg.norm(w - lam * v)) <= rtol * max(lam, 1e-300):
            break
    return float(np.sqrt(max(lam, 0.0)))


def loewner_margin(A: np.ndarray, B: np.ndarray) -> float:
    """Smallest eigenvalue of B - A; nonnegative iff A <= B in Loewner order."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("loewner_margin expects two square matrices of equal shape")
    D = B - A
    scale = max(1.0, float(np.max(np.abs(D))))
    if np.max(np.abs(D - D.T)) > 1e-10 * scale:
        raise ValueError("difference matrix is not symmetric")
    D = (D + D.T) / 2.0
    n = D.shape[0]
    if n > MARGIN_DIM_CAP:
        raise ValueError(f"margin computation capped at dim {MARGIN_DIM_CAP}")
    if n <= EIGH_DIM_CAP:
        return float(np.linalg.eigvalsh(D)[0])
    # Shifted power iteration: lam_min(D) = c - lam_max(cI - D).  Shifting by
    # the spectral norm (plus slack) keeps cI - D psd while keeping the shift
    # tight; a loose shift would flatten the eigenvalue ratio and stall.
    # Convergence still degrades when the bottom of the spectrum clusters.
    c = spectral_norm(D) * (1.0 + 1e-12) + 1e-300
    S = c * np.eye(n) - D
    v = np.random.default_rng(0).normal(size=n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(1000):
        w = S @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return c
        v = w / norm
        new = float(v @ (S @ v))
        if lam > 0 and abs(new - lam) <= 1e-13 * new:
            lam = new
            break
        lam = new
    return c - lam


@dataclass
class TightnessReport:
    """Gap chains and certificates for the deterministic bounds.

    upper_gap_lhs <= upper_gap <= upper_gap_rhs brackets the Frobenius error
    of the diagonal-weight upper bound; lower_gap <= lower_gap_rhs (with the
    looser lower_gap_rhs_relaxed above it) controls the rank-k lower bound;
    efim_gap <= efim_gap_bound holds for every label assignment in spectral
    norm; and per sample the exhaustively-worst label realizes a spectral
    error of at least adversarial_floors[i].
    """

    k: int
    upper_gap_lhs: float
    upper_gap: float
    upper_gap_rhs: float
    lower_gap: float
    lower_gap_rhs: float
    lower_gap_rhs_relaxed: float
    trace_lower: float
    trace_mid: float
    trace_value: float
    trace_upper: float
    efim_gap: float | None
    efim_gap_bound: float
    adversarial_errors: tuple
    adversarial_floors: tuple
    adversarial_labels: tuple
    per_label_errors: tuple  # per sample: spectral error of each label choice
    per_sample_efim_bounds: tuple  # per sample: (1 + |p|^2) sigma_max^2

    def to_json(self) -> str:
        payload = {
            key: (
                [list(item) if isinstance(item, tuple) else item for item in value]
                if isinstance(value, tuple)
                else value
            )
            for key, value in self.__dict__.items()
        }
        return json.dumps(payload, indent=2)


def tightness_report(net: NetworkSpec, theta, X, k: int = 1, labels=None) -> TightnessReport:
    """All bound-gap certificates for one (network, parameters, inputs) triple.

    Labels are optional; when given, the realized empirical-FIM error in
    spectral norm is reported against its universal bound.  The adversarial
    floor is always computed by exhaustive search over the label of each
    sample.
    """
    C = net.n_classes
    if not 1 <= k <= C - 1:
        raise ValueError(f"rank parameter must be in [1, {C - 1}], got {k}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    samples = _sample_quantities(net, theta, X)
    dim = as_flat(theta).size

    fim = np.zeros((dim, dim))
    upper = np.zeros((dim, dim))
    lower = np.zeros((dim, dim))
    lhs4 = 0.0
    upper_rhs = 0.0
    lower_rhs = 0.0
    lower_rhs_relaxed = 0.0
    efim_bound = 0.0
    adversarial_errors = []
    adversarial_floors = []
    adversarial_labels = []
    per_label_errors = []
    per_sample_bounds = []
    efim_mat = np.zeros((dim, dim)) if labels is not None else None

    for i, s in enumerate(samples):
        core = simplex_matrix(s.p)
        fim += s.J.T @ core @ s.J
        upper += s.J.T @ (s.p[:, None] * s.J)
        top = s.V[:, C - k:]
        lower += s.J.T @ ((top * s.lam[C - k:]) @ top.T) @ s.J

        omega = s.J.T @ s.p
        lhs4 += float(omega @ omega) ** 2
        sq = float(s.p @ s.p)
        sigma2 = s.sigma**2
        upper_rhs += sq * float(sigma2[-1])

        q = order_stats(s.p)
        sigma4 = sigma2**2
        # ascending order-stat index i in [2, C-k] pairs with singular i+k
        terms = [sigma4[j + k] * q[j] ** 2 for j in range(1, C - k)]
        lower_rhs += float(np.sqrt(np.sum(terms))) if terms else 0.0
        trimmed = [q[j] ** 2 for j in range(1, C - k)]
        lower_rhs_relaxed += float(np.sqrt(np.sum(trimmed))) * float(sigma2[-1]) if trimmed else 0.0

        efim_bound += (1.0 + sq) * float(sigma2[-1])
        per_sample_bounds.append((1.0 + sq) * float(sigma2[-1]))
        floor = float(sigma2[0]) * abs(1.0 + sq - float(s.lam[-1]) - 2.0 * float(q[0]))
        errs = []
        for y in range(C):
            r = -s.p.copy()
            r[y] += 1.0
            diff = s.J.T @ (core - np.outer(r, r)) @ s.J
            errs.append(spectral_norm(diff))
        worst = int(np.argmax(errs))
        adversarial_errors.append(float(errs[worst]))
        adversarial_floors.append(floor)
        adversarial_labels.append(worst)
        per_label_errors.append(tuple(errs))
        if efim_mat is not None:
            y = int(labels[i])
            if not 0 <= y < C:
                raise ValueError(f"label {y} out of range")
            r = -s.p.copy()
            r[y] += 1.0
            efim_mat += s.J.T @ np.outer(r, r) @ s.J

    tb = _trace_chain(samples)
    return TightnessReport(
        k=k,
        upper_gap_lhs=float(np.sqrt(lhs4)),
        upper_gap=float(np.linalg.norm(upper - fim)),
        upper_gap_rhs=upper_rhs,
        lower_gap=float(np.linalg.norm(lower - fim)),
        lower_gap_rhs=lower_rhs,
        lower_gap_rhs_relaxed=lower_rhs_relaxed,
        trace_lower=tb.lower,
        trace_mid=tb.vn_lower,
        trace_value=tb.trace,
        trace_upper=tb.upper,
        efim_gap=(spectral_norm(fim - efim_mat) if efim_mat is not None else None),
        efim_gap_bound=efim_bound,
        adversarial_errors=tuple(adversarial_errors),
        adversarial_floors=tuple(adversarial_floors),
        adversarial_labels=tuple(adversarial_labels),
        per_label_errors=tuple(per_label_errors),
        per_sample_efim_bounds=tuple(per_sample_bounds),
    )


def _trace_chain(samples: list[_SampleQuantities]) -> TraceBounds:
    lower = vn = trace = upper = 0.0
    for s in samples:
        sigma2 = s.sigma**2
        lower += float(s.lam[-1] * sigma2[0])
        # ascending eigenvalues paired with descending squared singulars
        vn += float(s.lam[1:] @ sigma2[::-1][1:])
        trace += float(np.sum(simplex_matrix(s.p) * (s.J @ s.J.T)))
        upper += float(s.p @ np.sum(s.J * s.J, axis=1))
    return TraceBounds(lower=lower, vn_lower=vn, trace=trace, upper=upper)
