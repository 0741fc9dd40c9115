from .generation import (RolloutScore, generate_batch, generate_trajectory, mc_rollout_score,
                         prefix_states, rollout, score_batch)
from .loop import (METHODS, METRIC_COLUMNS, ONLINE_METHODS, OnlineLearner, OnlineSchedule,
                   ReplayBuffers, Trainer, TrainSchedule, checkpoint_method, collect_sessions,
                   draw_offline, models_from_checkpoint, online_learning_loop)
from .updates import (agent_returns, agent_seq_return, agent_total_update, disc_update,
                      offline_scores, return_matrix, user_adv_update)

__all__ = [
    "METHODS", "METRIC_COLUMNS", "ONLINE_METHODS", "OnlineLearner", "OnlineSchedule",
    "ReplayBuffers", "RolloutScore", "TrainSchedule", "Trainer", "agent_returns",
    "agent_seq_return", "agent_total_update", "checkpoint_method", "collect_sessions", "disc_update",
    "draw_offline", "generate_batch", "generate_trajectory", "mc_rollout_score", "models_from_checkpoint",
    "offline_scores", "online_learning_loop", "prefix_states", "return_matrix", "rollout",
    "score_batch", "user_adv_update",
]
