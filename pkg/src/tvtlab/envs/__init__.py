from .tasks import (
    TASK_IDS,
    GridTaskEnv,
    TaskConfig,
    default_task_config,
    p2_variance,
    simulate_collect_all_p2,
)
from . import grid

__all__ = [
    "TASK_IDS", "GridTaskEnv", "TaskConfig", "default_task_config",
    "p2_variance", "simulate_collect_all_p2", "grid",
]
