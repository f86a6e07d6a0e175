"""State and objectives of the coupled multi-node linear model.

Each node owns one linear predictor; the predictors are the columns of
``W`` (d x m) and are tied together by an m x m relationship matrix
``Omega`` through the penalty

    (lambda1/2) * tr(W Omega W^T) + (lambda2/2) * ||W||_F^2 .

Per-sample losses are averaged within each node, so a node's clean and
injected points all carry weight ``1/(n + n_hat)``.

The dual machinery never forms the md x md coupling explicitly: because the
penalty has Kronecker structure, everything reduces to the m x m matrix
``A = (Omega + (lambda2/lambda1) I)^-1`` whose (i, j) entry scales the
d x d identity block coupling nodes i and j.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InfeasibleDualError, ValidationError
from .losses import BOX_TOL, LossKind


class Split(Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass
class NodeDataset:
    """One node's local data: features (n x d), labels (n,)."""

    node_id: int
    features: np.ndarray
    labels: np.ndarray
    split: Split = Split.TRAIN

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValidationError(
                f"node {self.node_id}: features must be 2-D, got {self.features.ndim}-D"
            )
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise ValidationError(
                f"node {self.node_id}: labels must be 1-D with one entry per row"
            )
        if not np.all(np.isfinite(self.features)) or not np.all(np.isfinite(self.labels)):
            raise ValidationError(f"node {self.node_id}: non-finite value in data")
        if self.split is Split.TRAIN and self.n == 0:
            raise ValidationError(f"node {self.node_id}: empty training split")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class InjectedSet:
    """Attacker-controlled points at one node; empty for non-source nodes."""

    node_id: int
    features: np.ndarray
    labels: np.ndarray
    duals: np.ndarray

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        self.duals = np.ascontiguousarray(self.duals, dtype=np.float64)
        n = self.features.shape[0]
        if self.labels.shape != (n,) or self.duals.shape != (n,):
            raise ValidationError(
                f"node {self.node_id}: injected labels/duals must match feature rows"
            )

    @classmethod
    def empty(cls, node_id: int, dim: int) -> "InjectedSet":
        return cls(node_id, np.zeros((0, dim)), np.zeros(0), np.zeros(0))

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass
class CouplingMatrix:
    """A = (Omega + (lambda2/lambda1) I)^-1, symmetric positive definite."""

    A: np.ndarray


def build_coupling(omega: np.ndarray, lambda1: float, lambda2: float) -> CouplingMatrix:
    """Invert the node-coupling system, exploiting its Kronecker structure.

    Only the m x m inverse is formed; the (i, j) block of the full md x md
    coupling is ``A[i, j] * I_d``, so e.g. the coupled squared norm of a
    feature vector at node l is just ``A[l, l] * ||x||^2``.
    """
    omega = np.asarray(omega, dtype=np.float64)
    if lambda1 <= 0 or lambda2 <= 0:
        raise ValidationError("lambda1 and lambda2 must be positive")
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
        raise ValidationError("Omega must be square")
    if not np.allclose(omega, omega.T, atol=1e-10):
        raise ValidationError("Omega must be symmetric")
    m = omega.shape[0]
    A = np.linalg.inv(omega + (lambda2 / lambda1) * np.eye(m))
    return CouplingMatrix(A=0.5 * (A + A.T))


@dataclass
class ModelState:
    """Weights, per-node duals and the relationship matrix of a federation.

    ``alphas[l]`` has length ``n_l + n_hat_l`` with the clean duals first.
    ``coupling`` is kept consistent with ``Omega`` at all times; ``W`` is
    re-derived from the duals after every solver round.
    """

    W: np.ndarray
    alphas: list
    Omega: np.ndarray
    lambda1: float
    lambda2: float
    coupling: CouplingMatrix
    final_gap: float | None = None
    rounds_run: int = 0
    # most recent dual step per injected point, keyed by node id; used by
    # the attack's feature-gradient updates
    last_injected_deltas: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.Omega.shape[0]


def init_state(nodes, injected=None, lambda1=0.001, lambda2=0.001, omega=None) -> ModelState:
    """Fresh state with zero weights and duals; Omega defaults to I/m."""
    m = len(nodes)
    d = nodes[0].dim
    if omega is None:
        omega = np.eye(m) / m
    omega = np.asarray(omega, dtype=np.float64)
    coupling = build_coupling(omega, lambda1, lambda2)
    alphas = []
    for node in nodes:
        n_hat = injected[node.node_id].n if injected else 0
        alphas.append(np.zeros(node.n + n_hat))
    return ModelState(
        W=np.zeros((d, m)),
        alphas=alphas,
        Omega=omega,
        lambda1=lambda1,
        lambda2=lambda2,
        coupling=coupling,
    )


def _node_feature_sums(nodes, injected, alphas):
    """Per-node averaged dual-feature sums s_l = (X_l^T a_l + Xh_l^T ah_l) / N_l."""
    d = nodes[0].dim
    S = np.zeros((d, len(nodes)))
    for node in nodes:
        l = node.node_id
        alpha = alphas[l]
        n = node.n
        inj = injected[l] if injected else None
        n_hat = inj.n if inj is not None else 0
        if alpha.shape[0] != n + n_hat:
            raise ValidationError(
                f"node {l}: dual vector length {alpha.shape[0]} != {n + n_hat}"
            )
        s = node.features.T @ alpha[:n]
        if n_hat:
            s = s + inj.features.T @ alpha[n:]
        S[:, l] = s / (n + n_hat)
    return S


def w_from_alpha(coupling: CouplingMatrix, nodes, injected, alphas, lambda1: float) -> np.ndarray:
    """Map dual variables to primal weights.

    ``w_t = (1/lambda1) * sum_l A[t, l] * s_l`` with ``s_l`` the per-node
    average of dual-weighted feature rows.  With this scaling the
    closed-form coordinate steps in the solver are exact minimisers of the
    Fenchel dual of the averaged primal objective, so the reported duality
    gap is a true optimality certificate.
    """
    S = _node_feature_sums(nodes, injected, alphas)
    return (S @ coupling.A) / lambda1


def _node_loss_mean(kind, W, node, inj):
    """Mean per-sample loss at one node over clean plus injected points."""
    w = W[:, node.node_id]
    margins = node.features @ w
    if kind is LossKind.LEAST_SQUARES:
        total = np.sum((margins - node.labels) ** 2)
    else:
        total = np.sum(np.maximum(0.0, 1.0 - margins * node.labels))
    n_hat = inj.n if inj is not None else 0
    if n_hat:
        mh = inj.features @ w
        if kind is LossKind.LEAST_SQUARES:
            total += np.sum((mh - inj.labels) ** 2)
        else:
            total += np.sum(np.maximum(0.0, 1.0 - mh * inj.labels))
    return total / (node.n + n_hat)


def regularizer(W: np.ndarray, omega: np.ndarray, lambda1: float, lambda2: float) -> float:
    return 0.5 * lambda1 * float(np.trace(W @ omega @ W.T)) + 0.5 * lambda2 * float(
        np.sum(W * W)
    )


def primal_value(W, omega, nodes, injected, lambda1, lambda2, kind) -> float:
    """Primal objective for arbitrary weights (used by solver diagnostics
    and by brute-force oracles in the tests)."""
    loss = 0.0
    for node in nodes:
        inj = injected[node.node_id] if injected else None
        loss += _node_loss_mean(kind, W, node, inj)
    return loss + regularizer(W, omega, lambda1, lambda2)


def primal_objective(state: ModelState, nodes, injected, kind) -> float:
    """Sum of per-node mean losses plus the (half-scaled) penalties."""
    return primal_value(
        state.W, state.Omega, nodes, injected, state.lambda1, state.lambda2, kind
    )


def dual_objective(state: ModelState, nodes, injected, kind) -> float:
    """Dual objective: per-node averaged conjugate losses plus the coupled
    quadratic of the dual-feature sums.

    The quadratic equals the primal regulariser evaluated at
    ``w_from_alpha``; together with the conjugate terms this makes
    ``primal_objective + dual_objective`` an exact Fenchel duality gap,
    non-negative for any feasible duals.
    """
    conj = 0.0
    for node in nodes:
        l = node.node_id
        alpha = state.alphas[l]
        n = node.n
        inj = injected[l] if injected else None
        n_hat = inj.n if inj is not None else 0
        labels = node.labels if not n_hat else np.concatenate([node.labels, inj.labels])
        if kind is LossKind.LEAST_SQUARES:
            vals = -labels * alpha + alpha * alpha / 4.0
        else:
            ya = labels * alpha
            if np.any(ya < -BOX_TOL) or np.any(ya > 1.0 + BOX_TOL):
                raise InfeasibleDualError(
                    f"node {l}: hinge dual outside [0, 1] box"
                )
            vals = -ya
        conj += float(np.sum(vals)) / (n + n_hat)
    S = _node_feature_sums(nodes, injected, state.alphas)
    quad = float(np.sum(state.coupling.A * (S.T @ S))) / (2.0 * state.lambda1)
    return conj + quad


def duality_gap(state: ModelState, nodes, injected, kind) -> float:
    """primal + dual; >= 0 for any duals, -> 0 at the optimum."""
    return primal_objective(state, nodes, injected, kind) + dual_objective(
        state, nodes, injected, kind
    )


def update_omega(W: np.ndarray, epsilon: float = 1e-8) -> np.ndarray:
    """Trace-normalised principal square root of W^T W (+ epsilon ridge).

    The result is symmetric positive semidefinite with unit trace; its
    off-diagonal entries grow with the correlation between node weight
    vectors, which is the channel indirect attacks exploit.
    """
    W = np.asarray(W, dtype=np.float64)
    if not np.all(np.isfinite(W)):
        raise ValidationError("W contains non-finite values")
    gram = W.T @ W
    vals, vecs = np.linalg.eigh(0.5 * (gram + gram.T))
    vals = np.sqrt(np.maximum(vals, 0.0) + epsilon)
    S = (vecs * vals) @ vecs.T
    S = 0.5 * (S + S.T)
    return S / np.trace(S)


def validate_federation(nodes) -> None:
    """Shared-dimension and indexing checks across a federation."""
    if not nodes:
        raise ValidationError("federation is empty")
    d = nodes[0].dim
    for pos, node in enumerate(nodes):
        if node.node_id != pos:
            raise ValidationError(
                f"nodes must be ordered by id: position {pos} holds node {node.node_id}"
            )
        if node.dim != d:
            raise ValidationError(
                f"node {node.node_id}: dimension {node.dim} != federation dimension {d}"
            )
