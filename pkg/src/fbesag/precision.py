"""Precision matrices for the flexible Besag field and constrained sampling.

The non-stationary field over N areas with P sub-regions has precision
Q(tau) = sum_k tau_k * B_k, where each edge (i, j) between sub-regions k and
l contributes weight (tau_k + tau_l) / 2 to the pairwise difference penalty.
The B_k are tau-independent and precomputed once per (graph, partition).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .graph import AdjacencyGraph, Partition, build_partition, connected_components


class FactorizationError(RuntimeError):
    """Cholesky failed even after jitter escalation."""


@dataclass(frozen=True)
class FbesagPrecision:
    """Sparse symmetric precision Q(tau) with its structure decomposition."""

    q: sp.csr_matrix = field(repr=False)
    structure_parts: tuple = field(repr=False)  # tuple of csr matrices B_k
    taus: np.ndarray
    rank_deficiency: int
    components: tuple = field(repr=False)  # tuple of frozenset of area indices

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def with_taus(self, taus) -> "FbesagPrecision":
        """Re-evaluate Q at new taus reusing the precomputed B_k."""
        taus = np.asarray(taus, dtype=float)
        if taus.shape != self.taus.shape:
            raise ValueError("tau dimension mismatch")
        if np.any(taus <= 0):
            raise ValueError("all taus must be positive")
        q = sum(t * b for t, b in zip(taus, self.structure_parts))
        return FbesagPrecision(q.tocsr(), self.structure_parts, taus,
                               self.rank_deficiency, self.components)


@dataclass(frozen=True)
class ConstraintSet:
    """Linear constraints A x = e on the field."""

    a: np.ndarray
    e: np.ndarray

    @property
    def n_constraints(self) -> int:
        return self.a.shape[0]


def sum_to_zero_constraints(precision: FbesagPrecision) -> ConstraintSet:
    """One sum-to-zero row per connected component (matches rank deficiency)."""
    a = np.zeros((len(precision.components), precision.n))
    for r, comp in enumerate(precision.components):
        a[r, sorted(comp)] = 1.0
    return ConstraintSet(a=a, e=np.zeros(a.shape[0]))


def structure_matrices(graph: AdjacencyGraph, partition: Partition) -> tuple:
    """Precompute the per-sub-region parts B_k with Q = sum_k tau_k B_k."""
    n = graph.n_areas
    p = partition.n_subregions
    rows: list[list[int]] = [[] for _ in range(p)]
    cols: list[list[int]] = [[] for _ in range(p)]
    vals: list[list[float]] = [[] for _ in range(p)]
    for (i, j) in graph.edges:
        for k in (partition.labels[i], partition.labels[j]):
            rows[k] += [i, j]
            cols[k] += [j, i]
            vals[k] += [-0.5, -0.5]
    for i in range(n):
        k = partition.labels[i]
        rows[k].append(i)
        cols[k].append(i)
        vals[k].append(0.5 * graph.degree(i))
        for l, n_il in partition.cross_counts[i].items():
            rows[l].append(i)
            cols[l].append(i)
            vals[l].append(0.5 * n_il)
    return tuple(
        sp.coo_matrix((vals[k], (rows[k], cols[k])), shape=(n, n)).tocsr()
        for k in range(p)
    )


def build_precision(graph: AdjacencyGraph, partition: Partition, taus) -> FbesagPrecision:
    """Assemble Q(tau) for the flexible Besag field.

    Q_ij = -(tau_k + tau_l)/2 on each edge (i in sub-region k, j in l) and
    Q_ii = (n_i tau_k(i) + sum_l n_il tau_l)/2, so every row sums to zero.
    """
    taus = np.asarray(taus, dtype=float)
    if taus.shape != (partition.n_subregions,):
        raise ValueError(
            f"need {partition.n_subregions} taus, got shape {taus.shape}"
        )
    if np.any(taus <= 0):
        raise ValueError("all taus must be positive")
    if len(partition.labels) != graph.n_areas:
        raise ValueError("partition does not match graph")
    parts = structure_matrices(graph, partition)
    q = sum(t * b for t, b in zip(taus, parts)).tocsr()
    comps = tuple(frozenset(c) for c in connected_components(graph))
    return FbesagPrecision(q, parts, taus, len(comps), comps)


def stationary_precision(graph: AdjacencyGraph, tau: float) -> FbesagPrecision:
    """The one-sub-region (stationary Besag) special case."""
    part = build_partition(graph, [0] * graph.n_areas)
    return build_precision(graph, part, [tau])


def conditional_params(i: int, x, precision: FbesagPrecision) -> tuple[float, float]:
    """Full-conditional (mean, precision) of area i given the rest.

    The conditional precision is Q_ii; the mean is the precision-weighted
    neighbour average -Q_ii^{-1} sum_{j != i} Q_ij x_j.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (precision.n,):
        raise ValueError("field length mismatch")
    if not (0 <= i < precision.n):
        raise ValueError(f"area index {i} out of range")
    row = precision.q.getrow(i).toarray().ravel()
    qii = row[i]
    if qii <= 0:
        raise ValueError(f"area {i} is isolated: conditional undefined")
    row[i] = 0.0
    mean = -float(row @ x) / qii
    return mean, float(qii)


def _nonzero_eigvals(precision: FbesagPrecision) -> np.ndarray:
    vals = np.linalg.eigvalsh(precision.q.toarray())
    return np.sort(vals)[precision.rank_deficiency:]


def log_generalized_det(precision: FbesagPrecision) -> float:
    """Log product of the N - rank_deficiency positive eigenvalues of Q."""
    return float(np.sum(np.log(_nonzero_eigvals(precision))))


def log_density(x, precision: FbesagPrecision) -> float:
    """Improper IGMRF log-density at x.

    -1/2 x^T Q x + 1/2 log gdet(Q) - (N - rankdef)/2 log(2 pi), with the
    generalized determinant over the nonzero eigenvalues of Q.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (precision.n,):
        raise ValueError("field length mismatch")
    quad = -0.5 * float(x @ (precision.q @ x))
    m = precision.n - precision.rank_deficiency
    return quad + 0.5 * log_generalized_det(precision) - 0.5 * m * np.log(2 * np.pi)


def _jittered_cholesky(q_dense: np.ndarray):
    base = 1e-8 * float(np.mean(np.diag(q_dense)))
    eps = base
    while eps <= 1e-4 * float(np.mean(np.diag(q_dense))) + 1e-300:
        try:
            fac = cho_factor(q_dense + eps * np.eye(q_dense.shape[0]), lower=True)
            return fac, eps
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise FactorizationError("Cholesky failed after jitter escalation")


def sample_field(precision: FbesagPrecision, constraints: ConstraintSet | None,
                 rng_seed: int, size: int | None = None) -> np.ndarray:
    """Draw constrained samples from the intrinsic field.

    Jitter eps*I is added to Q, an unconstrained N(0, Q_eps^{-1}) sample is
    drawn via Cholesky, and the sample is corrected by conditioning by
    kriging: x* = x - Q_eps^{-1} A^T (A Q_eps^{-1} A^T)^{-1} (A x - e).
    Deterministic given the seed.
    """
    if constraints is None:
        constraints = sum_to_zero_constraints(precision)
    rng = np.random.default_rng(rng_seed)
    n = precision.n
    q_dense = precision.q.toarray()
    fac, _ = _jittered_cholesky(q_dense)
    nsamp = 1 if size is None else size
    # x = L^{-T} z has covariance Q_eps^{-1}
    z = rng.standard_normal((n, nsamp))
    lower = np.tril(fac[0])
    x = np.linalg.solve(lower.T, z)
    a = constraints.a
    w = cho_solve(fac, a.T)             # Q_eps^{-1} A^T
    s = a @ w                           # A Q_eps^{-1} A^T
    resid = a @ x - constraints.e[:, None]
    x = x - w @ np.linalg.solve(s, resid)
    return x[:, 0] if size is None else x.T


def constrained_pseudo_covariance(precision: FbesagPrecision,
                                  constraints: ConstraintSet | None = None) -> np.ndarray:
    """Eigen-decomposition oracle for the covariance of constrained samples.

    For the default per-component sum-to-zero constraints this is the
    Moore-Penrose pseudo-inverse of Q; kept as an independent cross-check
    for the kriging sampler.
    """
    if constraints is None:
        constraints = sum_to_zero_constraints(precision)
    vals, vecs = np.linalg.eigh(precision.q.toarray())
    pos = vals > vals[-1] * 1e-10
    pinv = (vecs[:, pos] / vals[pos]) @ vecs[:, pos].T
    a = constraints.a
    apa = a @ pinv @ a.T
    if np.linalg.norm(apa) < 1e-12 * np.linalg.norm(pinv):
        return pinv
    return pinv - pinv @ a.T @ np.linalg.solve(apa, a @ pinv)


def cyclic_rw1_precision(n: int, tau: float) -> FbesagPrecision:
    """Circulant first-order random walk on a torus: 2*tau diagonal, -tau
    between cyclically adjacent indices.  Rank deficiency 1."""
    if n < 3:
        raise ValueError("cyclic RW1 needs n >= 3")
    if tau <= 0:
        raise ValueError("tau must be positive")
    g = AdjacencyGraph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])
    return stationary_precision(g, tau)


def cyclic_rw1_log_gdet(n: int, tau: float) -> float:
    """Closed-form log generalized determinant via circulant eigenvalues
    2*tau*(1 - cos(2 pi k / n)), k = 1..n-1."""
    k = np.arange(1, n)
    return float(np.sum(np.log(2.0 * tau * (1.0 - np.cos(2.0 * np.pi * k / n)))))


def export_triplets(precision: FbesagPrecision) -> str:
    """Coordinate-triplet text form: 'row col value', 0-based, sorted."""
    coo = precision.q.tocoo()
    entries = sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))
    return "\n".join(f"{r} {c} {v:.17g}" for r, c, v in entries if v != 0.0) + "\n"
