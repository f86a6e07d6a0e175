"""Primal losses and their conjugate duals.

Two losses are supported: squared error for regression and the hinge loss
for binary classification with labels in {-1, +1}.  The conjugates are what
the dual coordinate solver manipulates; a hinge dual is only defined on the
box 0 <= y*alpha <= 1, and leaving that box is a hard error so non-finite
values can never enter solver state (the solver clips its steps into the
box instead).
"""

from __future__ import annotations

from enum import Enum

from .errors import DomainError, InfeasibleDualError

# slack for floating point drift when checking the hinge dual box
BOX_TOL = 1e-9


class LossKind(Enum):
    LEAST_SQUARES = "least_squares"
    HINGE = "hinge"

    @property
    def is_classification(self) -> bool:
        return self is LossKind.HINGE


def check_label(kind: LossKind, label: float) -> None:
    """Raise DomainError if ``label`` is outside the domain of ``kind``."""
    if kind is LossKind.HINGE and label not in (-1.0, 1.0):
        raise DomainError(f"hinge labels must be -1 or +1, got {label!r}")


def primal_loss(kind: LossKind, margin: float, label: float) -> float:
    """Per-sample loss of the prediction value ``margin`` = <w, x>.

    Squared error ``(margin - label)^2`` for regression, or
    ``max(0, 1 - margin*label)`` for classification.  Always >= 0.
    """
    check_label(kind, label)
    if kind is LossKind.LEAST_SQUARES:
        diff = margin - label
        return diff * diff
    return max(0.0, 1.0 - margin * label)


def conjugate_loss(kind: LossKind, alpha: float, label: float) -> float:
    """Conjugate of the per-sample loss, evaluated at ``-alpha``.

    For squared error this is ``-y*alpha + alpha^2 / 4``.  For hinge it is
    ``-y*alpha`` on the feasible box ``0 <= y*alpha <= 1``; outside the box
    the conjugate is infinite, which we surface as InfeasibleDualError.
    """
    check_label(kind, label)
    if kind is LossKind.LEAST_SQUARES:
        return -label * alpha + alpha * alpha / 4.0
    ya = label * alpha
    if ya < -BOX_TOL or ya > 1.0 + BOX_TOL:
        raise InfeasibleDualError(
            f"hinge dual infeasible: y*alpha = {ya!r} not in [0, 1]"
        )
    return -ya
