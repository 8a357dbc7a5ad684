"""Mixed (masked + uniform) discrete diffusion with an O(N) scalar formulation."""

from xdlm.kernel import (
    LinearSchedule, LogLinearSchedule, MixedKernel, Schedule,
    build_kernel, corrupt, dense_K, dense_Q, make_schedule,
)
from xdlm.scalar import (
    ScalarContext, f_map, h_exact, h_limit, kl_scalar, loss_term,
    noise_rate, posterior, to_prediction,
)

__version__ = "0.1.0"

__all__ = [
    "LinearSchedule", "LogLinearSchedule", "MixedKernel", "Schedule", "build_kernel", "corrupt",
    "dense_K", "dense_Q", "make_schedule", "ScalarContext", "f_map", "h_exact", "h_limit",
    "kl_scalar", "loss_term", "noise_rate", "posterior", "to_prediction",
]
