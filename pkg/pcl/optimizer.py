"""
Streaming continual learning updates.

Each training step adds ``lambda * UpdateRule`` to the per-parameter
importance Omega and then moves every parameter by
``eta * grad / sqrt(Omega + epsilon)``. Two importance rules are provided:

* ``adagrad`` - the squared loss gradient;
* ``smas`` - the absolute gradient of the batch-mean squared L2 norm of the
  logits (streaming Memory Aware Synapses).

``sgd`` is the constant-learning-rate baseline and never touches Omega.
No task boundaries are used anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ConfigError
from .layers import ParamTensor
from .model import Network


RULES = ("adagrad", "smas", "sgd")
DEFAULT_EPSILON = 1e-6

# Stability-plasticity constant used when a config omits lambda.
DEFAULT_LAMBDA = {"adagrad": 0.8, "smas": 0.01, "sgd": 0.0}


@dataclass
class OptimizerConfig:
    """Optimizer settings.

    Attributes:
        rule: ``"adagrad"``, ``"smas"`` or ``"sgd"``.
        eta: Learning rate.
        lam: Stability-plasticity constant lambda (``"lambda"`` in config files).
        epsilon: Small constant added to Omega before the square root.
    """
    rule: str
    eta: float
    lam: float | None = None
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        if self.lam is None and self.rule in DEFAULT_LAMBDA:
            self.lam = DEFAULT_LAMBDA[self.rule]

    def validate(self) -> list[str]:
        errors: list[str] = []
        if self.rule not in RULES:
            errors.append(f"optimizer rule must be one of {RULES}, got {self.rule!r}")
        if not self.eta > 0:
            errors.append(f"eta must be positive, got {self.eta}")
        if self.lam is None or self.lam < 0:
            errors.append(f"lambda must be non-negative, got {self.lam}")
        if not self.epsilon > 0:
            errors.append(f"epsilon must be positive, got {self.epsilon}")
        return errors

    def to_dict(self) -> dict[str, Any]:
        return {
            "rule": self.rule,
            "eta": self.eta,
            "lambda": self.lam,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> OptimizerConfig:
        allowed = {"rule", "eta", "lambda", "epsilon"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"Unknown optimizer field(s): {', '.join(sorted(unknown))}")
        for required in ("rule", "eta"):
            if data.get(required) is None:
                raise ConfigError(f"Missing required optimizer field: {required}")
        for key in ("eta", "lambda", "epsilon"):
            value = data.get(key)
            if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise ConfigError(f"optimizer {key} must be a number, got {value!r}")
        return cls(
            rule=data["rule"],
            eta=float(data["eta"]),
            lam=None if data.get("lambda") is None else float(data["lambda"]),
            epsilon=DEFAULT_EPSILON if data.get("epsilon") is None else float(data["epsilon"]),
        )


def adagrad_importance(target: Network | list[ParamTensor]) -> list[np.ndarray]:
    """Importance deltas of the Adagrad rule: the squared loss gradient."""
    return [np.square(p.grad) for p in _params_of(target)]


def smas_importance(net: Network, x: np.ndarray | None = None) -> list[np.ndarray]:
    """Importance deltas of the S-MAS rule for the current batch.

    Back-propagates ``2 * logits / N`` (the gradient of the batch-mean
    squared L2 norm of the logits) and takes absolute values. The forward
    cache of the loss pass is reused when it was built from ``x`` (or when
    no ``x`` is given); otherwise ``x`` is run forward first. Loss gradients
    in ``ParamTensor.grad`` are preserved.
    """
    params = net.params()
    logits = net.last_logits
    if x is not None and net.last_batch is not x:
        logits = net.forward(x, train=True)
    elif logits is None:
        raise ConfigError("smas_importance needs a batch when no forward cache exists")

    loss_grads = [p.grad.copy() for p in params]
    net.backward(2.0 * logits / logits.shape[0])
    deltas = [np.abs(p.grad) for p in params]
    for p, saved in zip(params, loss_grads):
        p.grad = saved
    return deltas


def _params_of(target: Network | list[ParamTensor]) -> list[ParamTensor]:
    return target.params() if isinstance(target, Network) else list(target)


def apply_streaming_update(
    target: Network | list[ParamTensor], deltas: list[np.ndarray], cfg: OptimizerConfig
) -> None:
    """Update Omega first, then the parameters, using the updated Omega."""
    params = _params_of(target)
    if len(params) != len(deltas):
        raise ConfigError(f"{len(deltas)} importance deltas for {len(params)} parameters")
    for p, delta in zip(params, deltas):
        p.omega += cfg.lam * delta
        p.theta -= cfg.eta * p.grad / np.sqrt(p.omega + cfg.epsilon)


def apply_sgd_update(target: Network | list[ParamTensor], cfg: OptimizerConfig) -> None:
    for p in _params_of(target):
        p.theta -= cfg.eta * p.grad


class StreamingOptimizer:
    """Applies one configured update per batch to a single network.

    Call :meth:`step` after the loss backward. For ``smas`` that backward
    must have been run with ``retain_cache=True`` so the second pass can
    reuse the forward activations.
    """

    def __init__(self, net: Network, cfg: OptimizerConfig):
        errors = cfg.validate()
        if errors:
            raise ConfigError(f"Invalid optimizer: {'; '.join(errors)}")
        self.net = net
        self.cfg = cfg
        self.steps = 0

    @property
    def needs_retained_cache(self) -> bool:
        return self.cfg.rule == "smas"

    def step(self, x: np.ndarray | None = None) -> None:
        params = self.net.params()
        if self.cfg.rule == "sgd":
            apply_sgd_update(params, self.cfg)
        elif self.cfg.rule == "adagrad":
            apply_streaming_update(params, adagrad_importance(params), self.cfg)
        else:
            apply_streaming_update(params, smas_importance(self.net, x), self.cfg)
        self.steps += 1
