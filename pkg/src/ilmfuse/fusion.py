"""Fused step scores: baseline, shallow fusion, density ratio, internal-LM
subtraction.

A non-blank candidate scores e2e + lm_weight * ext_lm - sub_weight * sub_lm,
where sub_lm is the source-LM log prob for density_ratio and the internal-LM
log prob for ilme.  Blank candidates (transducer only) always score the e2e
term alone, whatever the method.  Zero-weight terms are skipped rather than
multiplied out, so the reductions baseline == shallow_fusion(lm_weight=0),
shallow_fusion == density_ratio(sub_weight=0) == ilme(sub_weight=0) are
bit-exact, not merely close.
"""

import math
from dataclasses import dataclass

from ilmfuse.errors import ConfigError

__all__ = ["METHODS", "FusionConfig", "StepScores", "fuse_step", "fused_total", "validate_config"]

METHODS = ("baseline", "shallow_fusion", "density_ratio", "ilme")
_SUBTRACTING = ("density_ratio", "ilme")


@dataclass(frozen=True)
class FusionConfig:
    """Method plus its weights.

    lm_weight is the target-LM interpolation weight; sub_weight is the
    subtrahend weight (source LM for density_ratio, internal LM for ilme)
    and must stay 0 for baseline and shallow_fusion.
    """

    method: str
    lm_weight: float = 0.0
    sub_weight: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown fusion method {self.method!r}; expected one of {METHODS}")
        for name in ("lm_weight", "sub_weight"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite, got {value!r}")
            if value < 0:
                raise ConfigError(f"{name} must be nonnegative, got {value!r}")
        if self.method not in _SUBTRACTING and self.sub_weight != 0.0:
            raise ConfigError(f"sub_weight is meaningless for method {self.method!r}; set it to 0")

    @property
    def uses_ext_lm(self) -> bool:
        return self.method != "baseline"

    @property
    def uses_sub_lm(self) -> bool:
        return self.method in _SUBTRACTING


@dataclass(frozen=True)
class StepScores:
    """The three log-probability components of one candidate step."""

    e2e: float
    ext_lm: float = 0.0
    sub_lm: float = 0.0


def fused_total(e2e: float, ext_lm: float, sub_lm: float, config: FusionConfig) -> float:
    """Combine component sums into a fused score; also used per step."""
    total = e2e
    if config.method != "baseline" and config.lm_weight != 0.0:
        total = total + config.lm_weight * ext_lm
    if config.method in _SUBTRACTING and config.sub_weight != 0.0:
        total = total - config.sub_weight * sub_lm
    return total


def fuse_step(scores: StepScores, config: FusionConfig, is_blank: bool = False) -> float:
    """Fused log score of one candidate; blank steps pass the e2e score through."""
    if is_blank:
        return scores.e2e
    return fused_total(scores.e2e, scores.ext_lm, scores.sub_lm, config)


def validate_config(config: FusionConfig, roles_present) -> None:
    """Check that the models a method needs are actually loaded.

    roles_present: iterable over {"target_lm", "source_lm"} naming the
    LMs available to the decoder.
    """
    roles = set(roles_present)
    unknown = roles - {"target_lm", "source_lm"}
    if unknown:
        raise ConfigError(f"unknown model roles: {sorted(unknown)}")
    if config.uses_ext_lm and "target_lm" not in roles:
        raise ConfigError(f"target LM required for method {config.method!r}")
    if config.method == "density_ratio" and "source_lm" not in roles:
        raise ConfigError("source LM required for method 'density_ratio'")
