"""Loss definitions: NPO baseline loss and analytic two-task verification objectives.

The quadratic pair family gives a retain loss ``0.5 * ||theta - a||^2`` and a
forget loss that is either the mirror quadratic around ``b`` or the bounded
variant ``1 - exp(-0.5 * ||theta - b||^2)``.  The bounded form keeps
"maximize the forget loss" finite so trajectory tests have a well-defined
Pareto front; it is a test fixture, not part of the classification path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import FlatGradient, Graph, ParameterLayout, ParameterVector, Segment, Tensor

UNBOUNDED_QUADRATIC = "unbounded_quadratic"
BOUNDED_EXP = "bounded_exp"
FORGET_KINDS = (UNBOUNDED_QUADRATIC, BOUNDED_EXP)

LOG_PROB_FLOOR = math.log(1e-12)


class UnboundedProblemError(ValueError):
    """The requested scalarization has no finite minimizer."""


@dataclass(frozen=True)
class LossPair:
    """Current retain/forget scalar losses with their sample counts."""

    retain_loss: float
    forget_loss: float
    retain_count: int = 1
    forget_count: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.retain_loss) and math.isfinite(self.forget_loss)):
            raise ValueError("losses must be finite")
        if self.retain_count < 1 or self.forget_count < 1:
            raise ValueError("sample counts must be >= 1")


@dataclass
class NpoConfig:
    """Inverse temperature and the frozen pre-unlearning reference snapshot.

    ``clamp_warnings`` counts batches in which a reference log-probability
    had to be clamped at log(1e-12).
    """

    beta: float
    reference_params: ParameterVector
    clamp_warnings: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")


class NpoLoss:
    """Forget-only preference loss against a frozen reference model.

    For a sample with true-label probability ``f`` under the live model and
    ``f_ref`` under the reference,

        loss = -(2 / beta) * mean(log sigmoid(-beta * log(f / f_ref)))

    The reference side is treated as a constant: no gradient flows into it.
    """

    def __init__(self, model: Graph, cfg: NpoConfig):
        if cfg.reference_params.layout != model.layout:
            raise ValueError("reference snapshot layout does not match the model")
        if model.logits is None or model.labels_input is None:
            raise ValueError("model graph must expose logits and a labels input")
        self.cfg = cfg
        self._graph = model.extended()
        lp = self._graph.logprob_true(model.logits, model.labels_input)
        ref = self._graph.input("ref_logprob")
        z = self._graph.scale(self._graph.sub(lp, ref), -cfg.beta)
        ls = self._graph.logsigmoid(z)
        self._graph.set_loss(self._graph.scale(self._graph.reduce_mean(ls), -2.0 / cfg.beta))
        self._logprob_node = lp

    def reference_logprobs(self, batch) -> np.ndarray:
        """True-label log-probabilities under the frozen reference, clamped below."""
        feats = batch.features.array if isinstance(batch.features, Tensor) else batch.features
        self._graph.run(
            self.cfg.reference_params,
            {"features": feats, "labels": batch.labels, "ref_logprob": np.zeros(len(batch.labels))},
        )
        lp = np.array(self._graph.value(self._logprob_node))
        if np.any(lp < LOG_PROB_FLOOR):
            self.cfg.clamp_warnings += 1
            lp = np.maximum(lp, LOG_PROB_FLOOR)
        return lp

    def loss(self, params: ParameterVector, batch, ref_logprobs: np.ndarray | None = None) -> float:
        if ref_logprobs is None:
            ref_logprobs = self.reference_logprobs(batch)
        feats = batch.features.array if isinstance(batch.features, Tensor) else batch.features
        return self._graph.run(
            params, {"features": feats, "labels": batch.labels, "ref_logprob": ref_logprobs}
        )

    def loss_and_grad(
        self, params: ParameterVector, batch, ref_logprobs: np.ndarray | None = None
    ) -> tuple[float, FlatGradient]:
        value = self.loss(params, batch, ref_logprobs)
        return value, self._graph.backward()


def npo_loss(model: Graph, params: ParameterVector, forget_batch, cfg: NpoConfig) -> float:
    """NPO loss of ``params`` on one forget batch (see :class:`NpoLoss`)."""
    return NpoLoss(model, cfg).loss(params, forget_batch)


def npo_loss_and_grad(
    model: Graph, params: ParameterVector, forget_batch, cfg: NpoConfig
) -> tuple[float, FlatGradient]:
    return NpoLoss(model, cfg).loss_and_grad(params, forget_batch)


def theta_layout(dim: int) -> ParameterLayout:
    """Single-segment layout for analytic problems over a bare vector."""
    return ParameterLayout((Segment("theta", (dim,), 0),))


@dataclass(frozen=True)
class QuadPairProblem:
    """Two-task objective with retain anchor ``a`` and forget anchor ``b``."""

    a: np.ndarray
    b: np.ndarray
    forget_kind: str = UNBOUNDED_QUADRATIC

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if a.ndim != 1 or a.shape != b.shape:
            raise ValueError("anchors must be 1-D vectors of equal length")
        if np.array_equal(a, b):
            raise ValueError("anchors must differ")
        if self.forget_kind not in FORGET_KINDS:
            raise ValueError(f"forget_kind must be one of {FORGET_KINDS}")
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    @property
    def layout(self) -> ParameterLayout:
        return theta_layout(self.dim)

    def _theta(self, theta) -> np.ndarray:
        arr = theta.data if isinstance(theta, ParameterVector) else np.asarray(theta, dtype=np.float64)
        if arr.shape != (self.dim,):
            raise ValueError(f"theta must have shape ({self.dim},)")
        return arr

    def retain_loss(self, theta) -> float:
        d = self._theta(theta) - self.a
        return 0.5 * float(d @ d)

    def retain_grad(self, theta) -> np.ndarray:
        return self._theta(theta) - self.a

    def forget_loss(self, theta) -> float:
        d = self._theta(theta) - self.b
        q = 0.5 * float(d @ d)
        if self.forget_kind == UNBOUNDED_QUADRATIC:
            return q
        return -math.expm1(-q)

    def forget_grad(self, theta) -> np.ndarray:
        d = self._theta(theta) - self.b
        if self.forget_kind == UNBOUNDED_QUADRATIC:
            return d
        return math.exp(-0.5 * float(d @ d)) * d


def lsp_value(problem: QuadPairProblem, theta, c: float) -> float:
    """Static scalarization ``c * L_retain - (1 - c) * L_forget``."""
    if not 0.0 <= c <= 1.0:
        raise ValueError("scalarization weight c must lie in [0, 1]")
    return c * problem.retain_loss(theta) - (1.0 - c) * problem.forget_loss(theta)


def lsp_gradient(problem: QuadPairProblem, theta, c: float) -> np.ndarray:
    if not 0.0 <= c <= 1.0:
        raise ValueError("scalarization weight c must lie in [0, 1]")
    return c * problem.retain_grad(theta) - (1.0 - c) * problem.forget_grad(theta)


def lsp_minimizer(problem: QuadPairProblem, c: float) -> np.ndarray:
    """Closed-form minimizer ``(c*a - (1-c)*b) / (2c - 1)`` of the scalarized objective.

    Only defined for the unbounded quadratic pair with ``c > 0.5``, where the
    scalarization is strictly convex (Hessian ``(2c - 1) * I``).
    """
    if problem.forget_kind != UNBOUNDED_QUADRATIC:
        raise UnboundedProblemError("closed form requires the unbounded quadratic pair")
    if not 0.5 < c <= 1.0:
        raise UnboundedProblemError(
            f"scalarized objective is unbounded below for c={c} (needs c > 0.5)"
        )
    return (c * problem.a - (1.0 - c) * problem.b) / (2.0 * c - 1.0)
