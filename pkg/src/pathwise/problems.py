"""JSON problem files for the equation solver.

Example::

    {
      "model": "black_scholes",
      "x0": 1.0,
      "sigma": 0.3,
      "drift": {"up_rate": 0.1, "down_rate": 0.0, "M": 0.1}
    }

``model: "custom"`` takes ``K`` and ``F`` entries from the coefficient
registry instead of ``sigma``::

    "K": {"type": "running_max", "coef": 0.5},
    "F": {"type": "constant", "value": [[0.2]]}

Optional keys: ``L`` (overrides the summed Lipschitz constants), ``level``,
``c1``, ``tol``, ``max_iter``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .sde import (
    DriftProcess,
    FunctionalCoefficient,
    SDEProblem,
    constant_diffusion,
    constant_drift,
    linear_diffusion,
    linear_drift,
    running_max_drift,
    zero_diffusion,
    zero_drift,
)

__all__ = ["ProblemSpec", "load_problem", "parse_problem", "DRIFT_REGISTRY", "DIFFUSION_REGISTRY"]

DRIFT_REGISTRY = {
    "zero": lambda spec: zero_drift(),
    "constant": lambda spec: constant_drift(spec["value"]),
    "linear": lambda spec: linear_drift(float(spec["coef"])),
    "running_max": lambda spec: running_max_drift(float(spec["coef"])),
}
DIFFUSION_REGISTRY = {
    "zero": lambda spec: zero_diffusion(),
    "constant": lambda spec: constant_diffusion(spec["value"]),
    "linear": lambda spec: linear_diffusion(float(spec["coef"])),
}
_KNOWN = {"model", "x0", "sigma", "drift", "K", "F", "L", "level", "c1", "tol", "max_iter"}


def _coef(registry, spec, what) -> FunctionalCoefficient:
    if not isinstance(spec, dict) or "type" not in spec:
        raise ValidationError(f"{what} must be an object with a 'type' key")
    kind = spec["type"]
    if kind not in registry:
        raise ValidationError(f"unknown {what} type {kind!r}; choose from {sorted(registry)}")
    try:
        return registry[kind](spec)
    except KeyError as exc:
        raise ValidationError(f"{what} of type {kind!r} is missing {exc.args[0]!r}") from None


def _number(raw, key, default=None, positive=False):
    val = raw.get(key, default)
    if val is None:
        return None
    try:
        val = float(val)
    except (TypeError, ValueError):
        raise ValidationError(f"{key} must be a number") from None
    if not math.isfinite(val) or (positive and val <= 0):
        raise ValidationError(f"{key} must be a finite{' positive' if positive else ''} number")
    return val


@dataclass(frozen=True)
class ProblemSpec:
    model: str
    x0: tuple
    K: FunctionalCoefficient
    F: FunctionalCoefficient
    up_rate: float
    down_rate: float
    M: float | None
    sigma: float | None = None
    L: float | None = None
    level: int | None = None
    c1: float = 6.0
    tol: float = 1e-12
    max_iter: int | None = None

    def build(self, horizon: float) -> SDEProblem:
        """The problem on ``[0, horizon]`` (the drift is ``A^u_t = up_rate t``,
        ``A^v_t = down_rate t``)."""
        drift = DriftProcess.linear(horizon, self.up_rate, self.down_rate, self.M)
        return SDEProblem(
            x0=list(self.x0), K=self.K, F=self.F, drift=drift, level=self.level,
            c1=self.c1, tol=self.tol, max_iter=self.max_iter, lipschitz=self.L,
        )


def parse_problem(raw: dict) -> ProblemSpec:
    if not isinstance(raw, dict):
        raise ValidationError("problem file must hold a JSON object")
    unknown = set(raw) - _KNOWN
    if unknown:
        raise ValidationError(f"unknown problem keys {sorted(unknown)}")
    model = raw.get("model", "custom")
    x0 = raw.get("x0", 0.0)
    x0 = tuple(float(v) for v in (x0 if isinstance(x0, list) else [x0]))
    drift = raw.get("drift", {})
    if not isinstance(drift, dict):
        raise ValidationError("drift must be an object")
    up = _number(drift, "up_rate", 0.0)
    down = _number(drift, "down_rate", 0.0)
    if up < 0 or down < 0:
        raise ValidationError("drift rates must be non-negative")
    M = _number(drift, "M")
    sigma = None
    if model == "black_scholes":
        sigma = _number(raw, "sigma")
        if sigma is None:
            raise ValidationError("black_scholes needs sigma")
        if len(x0) != 1:
            raise ValidationError("black_scholes is one-dimensional")
        K, F = linear_drift(1.0), linear_diffusion(sigma)
    elif model == "custom":
        K = _coef(DRIFT_REGISTRY, raw.get("K", {"type": "zero"}), "K")
        F = _coef(DIFFUSION_REGISTRY, raw.get("F", {"type": "zero"}), "F")
    else:
        raise ValidationError(f"unknown model {model!r}")
    level = raw.get("level")
    if level is not None and (not isinstance(level, int) or level < 0):
        raise ValidationError("level must be a non-negative integer")
    max_iter = raw.get("max_iter")
    if max_iter is not None and (not isinstance(max_iter, int) or max_iter < 1):
        raise ValidationError("max_iter must be a positive integer")
    L = _number(raw, "L")
    if L is not None and L < 0:
        raise ValidationError("L must be non-negative")
    return ProblemSpec(
        model, x0, K, F, up, down, M, sigma, L, level,
        _number(raw, "c1", 6.0, positive=True), _number(raw, "tol", 1e-12, positive=True), max_iter,
    )


def load_problem(source) -> ProblemSpec:
    """Parse a problem from a path, or from a JSON string starting with ``{``."""
    if isinstance(source, str) and source.lstrip().startswith("{"):
        text = source
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read problem file {source}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"problem file is not valid JSON: {exc.msg} (line {exc.lineno})") from None
    return parse_problem(raw)
