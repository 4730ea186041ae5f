"""Learning-rate schedules."""

from __future__ import annotations

import math
import warnings

from .errors import ParameterError, ScheduleWarning


def cosine_decay_lr(step: int, total_steps: int, lr_initial: float) -> float:
    """Half-cosine decay from ``lr_initial`` at step 0 down to 0 at ``total_steps``.

    ``lr(step) = 0.5 * lr_initial * (1 + cos(pi * step / total_steps))``

    Steps beyond ``total_steps`` clamp to the final value and emit a
    ScheduleWarning instead of raising.
    """
    if total_steps <= 0:
        raise ParameterError(f"total_steps must be positive, got {total_steps}")
    if lr_initial <= 0:
        raise ParameterError(f"lr_initial must be positive, got {lr_initial}")
    if step < 0:
        raise ParameterError(f"step must be nonnegative, got {step}")
    if step > total_steps:
        warnings.warn(
            f"schedule queried at step {step} > total_steps {total_steps}; "
            "clamping to the final value",
            ScheduleWarning,
            stacklevel=2,
        )
        step = total_steps
    return 0.5 * lr_initial * (1.0 + math.cos(math.pi * step / total_steps))
