"""Federated dual coordinate solver with closed-form steps.

Training runs in rounds.  Within a round every node performs
``local_passes`` stochastic sweeps over its own duals, sampling one clean
index per step (plus one injected index when the node hosts injected data)
and applying the exact one-dimensional minimiser of its dual subproblem.
Nodes only see the weight snapshot taken at the round barrier plus the
effect of their *own* updates (the diagonal coupling block), so running the
per-node passes sequentially or concurrently gives identical results.
After the barrier the coordinator recomputes W from the duals and
optionally refreshes Omega.

Communication is simulated, not transported: each round a node uploads its
d-vector contribution and downloads the fresh d-vector column, plus an
m x m broadcast whenever Omega is refreshed; RoundStats keeps the byte
counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleDualError, ValidationError
from .losses import BOX_TOL, LossKind
from .model import (
    ModelState,
    build_coupling,
    dual_objective,
    init_state,
    primal_objective,
    update_omega,
    validate_federation,
    w_from_alpha,
)

# stopping rule for solve_lower: duality gap below this, or the round cap
GAP_TOL = 1e-6


@dataclass
class SolverConfig:
    lambda1: float = 0.001
    lambda2: float = 0.001
    rounds: int = 50
    local_passes: int = 1
    omega_update_every: int = 1  # 0 freezes Omega
    seed: int = 0
    damping: float = 1.0

    def __post_init__(self):
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValidationError("lambda1 and lambda2 must be positive")
        if self.rounds < 1:
            raise ValidationError("rounds must be >= 1")
        if self.local_passes < 0:
            raise ValidationError("local_passes must be >= 0")
        if self.omega_update_every < 0:
            raise ValidationError("omega_update_every must be >= 0")
        if not 0.0 < self.damping <= 1.0:
            raise ValidationError("damping must be in (0, 1]")


@dataclass
class RoundStats:
    round: int
    primal: float
    dual: float
    gap: float
    bytes_up: int
    bytes_down: int


def delta_alpha_least_squares(alpha: float, margin: float, label: float,
                              coupled_norm: float) -> float:
    """Exact coordinate step for the squared-error dual.

    ``margin`` is <w_l, x> at the current local view and ``coupled_norm``
    the coupled squared norm of the sample as it enters this node's dual
    subproblem (must be > 0).
    """
    return (label - margin - 0.5 * alpha) / (0.5 + coupled_norm)


def delta_alpha_hinge(alpha: float, margin: float, label: float,
                      coupled_norm: float) -> float:
    """Exact coordinate step for the hinge dual.

    The unconstrained minimiser is clipped into the feasible box, so the
    post-step dual always satisfies 0 <= y*(alpha + delta) <= 1.
    """
    ya = label * alpha
    if ya < -BOX_TOL or ya > 1.0 + BOX_TOL:
        raise InfeasibleDualError(
            f"hinge dual infeasible before step: y*alpha = {ya!r}"
        )
    theta = ya + (1.0 - margin * label) / coupled_norm
    theta = min(1.0, max(0.0, theta))
    return label * theta - alpha


def _node_pass(node, inj, alpha, w_col, coupling_ll, config, kind, rng):
    """Run one node's local sweeps; returns updated duals, the drift of its
    averaged dual-feature sum, and the last step taken per injected point.

    Margins are the round-start snapshot corrected by the node's own
    updates through the diagonal coupling block (the local subproblem is
    solved exactly; other nodes' concurrent moves are invisible until the
    barrier).
    """
    n = node.n
    n_hat = inj.n if inj is not None else 0
    big_n = n + n_hat
    steps = config.local_passes * n
    alpha = alpha.copy()
    last_deltas = np.zeros(n_hat)
    du = np.zeros(node.dim)
    if steps == 0:
        return alpha, du, last_deltas

    coef = coupling_ll / config.lambda1  # own-update feedback into the margin
    scale = coupling_ll / (big_n * config.lambda1)
    base_clean = node.features @ w_col
    q_clean = scale * np.einsum("ij,ij->i", node.features, node.features)
    idx_clean = rng.integers(0, n, size=steps)
    if n_hat:
        base_inj = inj.features @ w_col
        q_inj = scale * np.einsum("ij,ij->i", inj.features, inj.features)
        idx_inj = rng.integers(0, n_hat, size=steps)

    ls = kind is LossKind.LEAST_SQUARES
    step_fn = delta_alpha_least_squares if ls else delta_alpha_hinge
    damping = config.damping
    labels = node.labels
    X = node.features
    for s in range(steps):
        i = idx_clean[s]
        x = X[i]
        margin = base_clean[i] + coef * (x @ du)
        delta = damping * step_fn(alpha[i], margin, labels[i], q_clean[i])
        if delta != 0.0:
            alpha[i] += delta
            du += (delta / big_n) * x
        if n_hat:
            j = idx_inj[s]
            xh = inj.features[j]
            margin = base_inj[j] + coef * (xh @ du)
            delta = damping * step_fn(alpha[n + j], margin, inj.labels[j], q_inj[j])
            if delta != 0.0:
                alpha[n + j] += delta
                du += (delta / big_n) * xh
            last_deltas[j] = delta
    return alpha, du, last_deltas


def run_round(state: ModelState, nodes, injected, kind: LossKind,
              config: SolverConfig, round_index: int = 0):
    """One synchronous round over all nodes; returns (state, RoundStats).

    Each node's random stream is derived from (seed, round, node id), so
    the trajectory is reproducible and independent of the order in which
    nodes are processed.
    """
    A = state.coupling.A
    d = nodes[0].dim
    m = len(nodes)
    new_alphas = []
    deltas = {}
    for node in nodes:
        l = node.node_id
        inj = injected[l] if injected else None
        rng = np.random.default_rng((config.seed, round_index, l))
        alpha, _, last = _node_pass(
            node, inj, state.alphas[l], state.W[:, l], A[l, l], config, kind, rng
        )
        new_alphas.append(alpha)
        if inj is not None and inj.n:
            deltas[l] = last
    state.alphas = new_alphas
    state.last_injected_deltas = deltas

    # barrier: recompute W; optionally refresh Omega (and then re-derive W
    # under the new coupling so state stays self-consistent)
    state.W = w_from_alpha(state.coupling, nodes, injected, state.alphas, config.lambda1)
    omega_refreshed = False
    if config.omega_update_every and (round_index + 1) % config.omega_update_every == 0:
        state.Omega = update_omega(state.W)
        state.coupling = build_coupling(state.Omega, config.lambda1, config.lambda2)
        state.W = w_from_alpha(
            state.coupling, nodes, injected, state.alphas, config.lambda1
        )
        omega_refreshed = True

    primal = primal_objective(state, nodes, injected, kind)
    dual = dual_objective(state, nodes, injected, kind)
    stats = RoundStats(
        round=round_index,
        primal=primal,
        dual=dual,
        gap=primal + dual,
        bytes_up=m * d * 8,
        bytes_down=m * d * 8 + (m * m * 8 if omega_refreshed else 0),
    )
    state.rounds_run = round_index + 1
    state.final_gap = stats.gap
    return state, stats


def solve_lower(nodes, injected, kind: LossKind, config: SolverConfig,
                omega=None, gap_tol: float = GAP_TOL, on_round=None) -> ModelState:
    """Train the federation on clean plus injected data.

    Runs rounds until the duality gap drops below ``gap_tol`` or the round
    cap is reached; the final gap is left on the returned state so callers
    can detect non-convergence.  ``omega`` fixes the initial relationship
    matrix (frozen entirely when ``config.omega_update_every`` is 0);
    ``on_round`` receives every RoundStats as it is produced.
    """
    validate_federation(nodes)
    state = init_state(
        nodes, injected, lambda1=config.lambda1, lambda2=config.lambda2, omega=omega
    )
    for r in range(config.rounds):
        state, stats = run_round(state, nodes, injected, kind, config, round_index=r)
        if on_round is not None:
            on_round(stats)
        if stats.gap < gap_tol:
            break
    return state
