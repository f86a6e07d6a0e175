"""Optimal data-poisoning attacks against the federated model.

The attacker controls the feature vectors of a budgeted set of points
injected at *source* nodes and wants to maximise the training loss of the
*target* nodes.  Labels of injected points are fixed at initialisation
(adversarial by construction); the features are then improved by projected
gradient ascent inside an l2 ball, alternating with solver rounds:

    per outer iteration
        1. one (or more) federated dual rounds over clean + injected data
        2. refresh W and Omega
        3. per source node, per injected point:
               x <- Proj_r( x + eta1 * dalpha * sum_t Omega[t, s] * pull_t )
           where pull_t aggregates the loss gradients of target node t's
           clean training points and dalpha is the point's most recent
           dual step.

Random baseline modes keep the initial draw and skip step 3 entirely, so
"random" and "optimised" attacks differ only in the ascent loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import InfeasibleSpecError, ValidationError
from .losses import LossKind
from .model import InjectedSet, ModelState, init_state
from .solver import SolverConfig, run_round
from .data import Federation

_INIT_NOISE = 0.1  # feature noise, in units of per-feature std
_RADIUS_FACTOR = 1.5  # default ball radius over the max clean row norm


class AttackMode(Enum):
    DIRECT = "direct"
    INDIRECT = "indirect"
    HYBRID = "hybrid"
    RANDOM_DIRECT = "random_direct"
    RANDOM_INDIRECT = "random_indirect"
    RANDOM_HYBRID = "random_hybrid"
    NONE = "none"

    @property
    def is_random(self) -> bool:
        return self.value.startswith("random_")

    @property
    def family(self) -> str:
        """direct / indirect / hybrid / none, ignoring the random flavour."""
        return self.value.removeprefix("random_")


@dataclass
class AttackSpec:
    targets: tuple
    sources: tuple
    mode: AttackMode
    injection_ratio: float = 0.2
    radius_r: float | None = None  # None: 1.5 x max clean row norm
    step_eta1: float = 100.0
    outer_iters: int = 50
    seed: int = 0
    # swap the printed Omega[t,s]*dalpha sensitivity for the exact linear-map
    # sensitivity A[t,s]*alpha (comparison experiments only)
    exact_sensitivity: bool = False

    def __post_init__(self):
        self.targets = tuple(sorted(set(self.targets)))
        self.sources = tuple(sorted(set(self.sources)))
        if self.injection_ratio < 0:
            raise ValidationError("injection_ratio must be >= 0")
        if self.radius_r is not None and self.radius_r <= 0:
            raise ValidationError("radius_r must be positive")
        if self.step_eta1 <= 0:
            raise ValidationError("step_eta1 must be positive")
        if self.outer_iters < 1:
            raise ValidationError("outer_iters must be >= 1")
        fam = self.mode.family
        if fam == "none":
            if self.sources:
                raise ValidationError("mode none cannot have source nodes")
        elif fam == "direct":
            if self.sources != self.targets:
                raise ValidationError("direct attacks require sources == targets")
        elif fam == "indirect":
            if set(self.sources) & set(self.targets):
                raise ValidationError("indirect attacks require disjoint sources")
        elif fam == "hybrid":
            if len(self.sources) != len(self.targets):
                raise ValidationError("hybrid attacks use one source per target")


def build_attack_spec(mode: AttackMode, node_ids, injection_ratio: float = 0.2,
                      seed: int = 0, targets=None, radius_r=None,
                      step_eta1: float = 100.0, outer_iters: int = 50,
                      exact_sensitivity: bool = False) -> AttackSpec:
    """Pick target and source sets for the requested attack mode.

    Targets default to a seeded random half of the nodes.  Sources follow
    the mode: equal to the targets (direct), an equally sized draw from the
    remaining nodes (indirect), or an equally sized draw from all nodes
    (hybrid).
    """
    node_ids = sorted(set(node_ids))
    if not node_ids:
        raise ValidationError("empty federation")
    rng = np.random.default_rng((seed, 0x7A36))
    if targets is None:
        k = max(1, len(node_ids) // 2)
        targets = sorted(rng.choice(node_ids, size=k, replace=False).tolist())
    else:
        targets = sorted(set(targets))
        if not set(targets) <= set(node_ids):
            raise ValidationError("targets outside the federation")
    fam = mode.family
    if fam == "none":
        sources = ()
    elif fam == "direct":
        sources = tuple(targets)
    elif fam == "indirect":
        free = sorted(set(node_ids) - set(targets))
        if len(free) < len(targets):
            raise InfeasibleSpecError(
                f"indirect attack needs {len(targets)} free nodes, only {len(free)} available"
            )
        sources = tuple(sorted(rng.choice(free, size=len(targets), replace=False).tolist()))
    else:  # hybrid
        sources = tuple(
            sorted(rng.choice(node_ids, size=len(targets), replace=False).tolist())
        )
    return AttackSpec(
        targets=tuple(targets),
        sources=sources,
        mode=mode,
        injection_ratio=injection_ratio,
        radius_r=radius_r,
        step_eta1=step_eta1,
        outer_iters=outer_iters,
        seed=seed,
        exact_sensitivity=exact_sensitivity,
    )


# points within a few ulps of the boundary count as inside, which makes the
# projection exactly idempotent under floating point
_BOUNDARY_SLACK = 1.0 + 4.0 * np.finfo(np.float64).eps


def project_ball(x: np.ndarray, r: float) -> np.ndarray:
    """Project a vector onto the l2 ball of radius r."""
    if r <= 0:
        raise ValidationError("projection radius must be positive")
    x = np.asarray(x, dtype=np.float64)
    nrm = float(np.linalg.norm(x))
    if nrm <= r * _BOUNDARY_SLACK:
        return x.copy()
    return x * (r / nrm)


def _project_rows(X: np.ndarray, r: float) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    outside = norms > r * _BOUNDARY_SLACK
    scale = np.where(outside, r / np.maximum(norms, 1e-300), 1.0)
    return X * scale[:, None]


def default_radius(nodes) -> float:
    """1.5 x the largest clean training row norm in the federation."""
    return _RADIUS_FACTOR * max(
        float(np.max(np.linalg.norm(node.features, axis=1))) for node in nodes
    )


def resolve_radius(spec: AttackSpec, nodes) -> float:
    return spec.radius_r if spec.radius_r is not None else default_radius(nodes)


def init_injected(spec: AttackSpec, nodes, kind: LossKind) -> dict:
    """Random initial poison for every source node (empty sets elsewhere).

    Each injected row is a uniformly sampled clean row plus isotropic noise
    (0.1 x the per-feature std), projected into the r-ball.  Labels are
    fixed for the whole attack: the negated label of the sampled point for
    classification, the sampled label reflected across the node's label
    mean for regression.  Duals start at zero.

    Each point uses its own (seed, node, index) random stream, so budgets
    at different injection ratios share a common prefix of draws.
    """
    radius = resolve_radius(spec, nodes)
    out = {}
    for node in nodes:
        l = node.node_id
        if l not in spec.sources or spec.injection_ratio == 0:
            out[l] = InjectedSet.empty(l, node.dim)
            continue
        if node.n == 0:
            raise ValidationError(f"node {l}: cannot seed poison from an empty node")
        n_hat = int(round(spec.injection_ratio * node.n))
        if n_hat == 0:
            out[l] = InjectedSet.empty(l, node.dim)
            continue
        std = node.features.std(axis=0)
        label_mean = float(node.labels.mean())
        rows = np.zeros((n_hat, node.dim))
        labels = np.zeros(n_hat)
        for i in range(n_hat):
            rng = np.random.default_rng((spec.seed, 0x1417, l, i))
            idx = int(rng.integers(0, node.n))
            x = node.features[idx] + _INIT_NOISE * std * rng.standard_normal(node.dim)
            rows[i] = project_ball(x, radius)
            y = float(node.labels[idx])
            labels[i] = -y if kind is LossKind.HINGE else 2.0 * label_mean - y
        out[l] = InjectedSet(l, rows, labels, np.zeros(n_hat))
    return out


def _target_pulls(kind: LossKind, W: np.ndarray, nodes, targets) -> dict:
    """Aggregate loss gradient w.r.t. the margin over each target node's
    clean training points: sum_j dL/dmargin(m_j, y_j) * x_j."""
    pulls = {}
    for t in targets:
        node = nodes[t]
        margins = node.features @ W[:, t]
        if kind is LossKind.LEAST_SQUARES:
            coeff = 2.0 * (margins - node.labels)
        else:
            # hinge subgradient, restricted to margin-violating samples
            coeff = np.where(margins * node.labels < 1.0, -node.labels, 0.0)
        pulls[t] = node.features.T @ coeff
    return pulls


def attack_gradient(kind: LossKind, state: ModelState, nodes, targets,
                    source: int, delta_alpha_hat: float) -> np.ndarray:
    """Feature-space ascent direction for one injected point at ``source``.

    Sums the per-sample loss gradients over every target node and every
    target sample, channelled through the relationship entry Omega[t, s]
    and scaled by the point's latest dual step.  Zero whenever the source
    is uncoupled from all targets.
    """
    pulls = _target_pulls(kind, state.W, nodes, targets)
    base = np.zeros(nodes[source].dim)
    for t in targets:
        base += state.Omega[t, source] * pulls[t]
    return delta_alpha_hat * base


@dataclass
class AttackTrace:
    """Per-iteration diagnostics of one attack run."""

    mode: str
    seed: int
    target_train_loss: list = field(default_factory=list)
    target_test_metric: list = field(default_factory=list)
    primal: list = field(default_factory=list)
    dual: list = field(default_factory=list)
    gap: list = field(default_factory=list)
    max_injected_norm: list = field(default_factory=list)
    bytes_up: int = 0
    bytes_down: int = 0
    final_gap: float = float("nan")
    lower_converged: bool = False

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "target_train_loss": list(self.target_train_loss),
            "target_test_metric": list(self.target_test_metric),
            "primal": list(self.primal),
            "dual": list(self.dual),
            "gap": list(self.gap),
            "max_injected_norm": list(self.max_injected_norm),
            "bytes_up": self.bytes_up,
            "bytes_down": self.bytes_down,
            "final_gap": self.final_gap,
            "lower_converged": self.lower_converged,
        }


def target_train_loss(kind: LossKind, W: np.ndarray, nodes, targets) -> float:
    """Upper objective of the attack: summed mean clean training loss of
    the target nodes."""
    total = 0.0
    for t in targets:
        node = nodes[t]
        margins = node.features @ W[:, t]
        if kind is LossKind.LEAST_SQUARES:
            total += float(np.mean((margins - node.labels) ** 2))
        else:
            total += float(np.mean(np.maximum(0.0, 1.0 - margins * node.labels)))
    return total


def _target_test_metric(kind, W, test_nodes, targets):
    preds, labels = [], []
    for t in targets:
        node = test_nodes[t]
        if node is None or node.n == 0:
            continue
        margins = node.features @ W[:, t]
        preds.append(margins)
        labels.append(node.labels)
    if not preds:
        return None
    margins = np.concatenate(preds)
    labels = np.concatenate(labels)
    if kind is LossKind.HINGE:
        signs = np.where(margins >= 0.0, 1.0, -1.0)
        return 100.0 * float(np.mean(signs != labels))
    return float(np.sqrt(np.mean((margins - labels) ** 2)))


def at2fl_run(nodes, spec: AttackSpec, config: SolverConfig, kind: LossKind,
              test_nodes=None, rounds_per_iter: int = 1):
    """Alternate federated dual rounds with projected feature ascent.

    Returns (final ModelState, injected sets, AttackTrace).  The trace
    records the target training loss (the attack's objective), the target
    test metric when test data is supplied, and the lower-level duality gap
    per outer iteration.  Random modes never move the injected features,
    and mode none degenerates to plain training.
    """
    if rounds_per_iter < 1:
        raise ValidationError("rounds_per_iter must be >= 1")
    radius = None
    if spec.sources:
        radius = resolve_radius(spec, nodes)
        spec = replace(spec, radius_r=radius)
    injected = init_injected(spec, nodes, kind)
    state = init_state(nodes, injected, config.lambda1, config.lambda2)
    trace = AttackTrace(mode=spec.mode.value, seed=spec.seed)
    optimise = (
        not spec.mode.is_random
        and spec.mode is not AttackMode.NONE
        and any(injected[s].n for s in spec.sources)
    )
    round_index = 0
    for _ in range(spec.outer_iters):
        for _ in range(rounds_per_iter):
            state, stats = run_round(
                state, nodes, injected, kind, config, round_index=round_index
            )
            round_index += 1
            trace.bytes_up += stats.bytes_up
            trace.bytes_down += stats.bytes_down
        if optimise:
            pulls = _target_pulls(kind, state.W, nodes, spec.targets)
            for s in spec.sources:
                inj = injected[s]
                if inj.n == 0:
                    continue
                if spec.exact_sensitivity:
                    channel = state.coupling.A
                    n = nodes[s].n
                    factors = state.alphas[s][n:]
                else:
                    channel = state.Omega
                    factors = state.last_injected_deltas.get(s)
                    if factors is None:
                        factors = np.zeros(inj.n)
                base = np.zeros(nodes[s].dim)
                for t in spec.targets:
                    base += channel[t, s] * pulls[t]
                inj.features = _project_rows(
                    inj.features + spec.step_eta1 * factors[:, None] * base[None, :],
                    radius,
                )
        trace.target_train_loss.append(
            target_train_loss(kind, state.W, nodes, spec.targets)
        )
        if test_nodes is not None:
            metric = _target_test_metric(kind, state.W, test_nodes, spec.targets)
            if metric is not None:
                trace.target_test_metric.append(metric)
        trace.primal.append(stats.primal)
        trace.dual.append(stats.dual)
        trace.gap.append(stats.gap)
        max_norm = 0.0
        for s in spec.sources:
            if injected[s].n:
                max_norm = max(
                    max_norm, float(np.max(np.linalg.norm(injected[s].features, axis=1)))
                )
        trace.max_injected_norm.append(max_norm)
    # sync the dual tail into the injected sets for the caller
    for node in nodes:
        l = node.node_id
        if injected[l].n:
            injected[l].duals = state.alphas[l][node.n :].copy()
    trace.final_gap = trace.gap[-1] if trace.gap else float("nan")
    trace.lower_converged = bool(trace.final_gap < 1e-3)
    return state, injected, trace


def run_attack(fed: Federation, spec: AttackSpec, config: SolverConfig,
               rounds_per_iter: int = 1):
    """Convenience wrapper taking a Federation bundle."""
    return at2fl_run(
        fed.train, spec, config, fed.loss,
        test_nodes=fed.test, rounds_per_iter=rounds_per_iter,
    )
