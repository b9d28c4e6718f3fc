from __future__ import annotations

import json
import math
from dataclasses import dataclass, field


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if hasattr(v, "item"):
        return _clean(v.item())
    return v


@dataclass
class CheckReport:
    """Outcome of one sampled inequality check."""

    name: str
    passed: bool
    worst: float
    threshold: float
    samples: int
    fitted_C: float | None = None
    skipped: int = 0
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return _clean(
            {
                "check": self.name,
                "pass": bool(self.passed),
                "worst_ratio": float(self.worst),
                "threshold": float(self.threshold),
                "fitted_C": None if self.fitted_C is None else float(self.fitted_C),
                "skipped": int(self.skipped),
                "samples": int(self.samples),
                "details": self.details,
            }
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def stable(first: float, second: float, tolerance: float = 0.10) -> bool:
    """Finite and changed by less than ``tolerance`` (relative) between two sample sizes."""
    if not (math.isfinite(first) and math.isfinite(second)):
        return False
    scale = max(abs(first), abs(second))
    if scale == 0.0:
        return True
    return abs(second - first) < tolerance * scale
