from .bias import (BiasReport, audit_from_distributions, bias_audit, fit_discriminator,
                   identity_audit, optimal_discriminator, optimal_discriminator_check)
from .enumeration import (BeliefUserWorld, EnumeratedDistribution, EnumerationTooLarge,
                          LoggingAgentProcess, ModelAgentProcess, ModelUserWorld, SimulatorWorld,
                          enumerate_distribution, shifted_reward, slate_set_distribution)
from .metrics import (AgentRecommender, CoverageReport, FixedRecommender, OracleRecommender,
                      RandomRecommender, RandomReranker, Recommender, UserRerankRecommender,
                      as_recommender, avg_cumulative_reward, coverage_at_r, precision_at_k,
                      simulate)

__all__ = [
    "AgentRecommender", "BeliefUserWorld", "BiasReport", "CoverageReport",
    "EnumeratedDistribution", "EnumerationTooLarge", "FixedRecommender", "LoggingAgentProcess",
    "ModelAgentProcess", "ModelUserWorld", "OracleRecommender", "RandomRecommender",
    "RandomReranker", "Recommender", "SimulatorWorld", "UserRerankRecommender",
    "as_recommender", "audit_from_distributions", "avg_cumulative_reward", "bias_audit",
    "coverage_at_r", "enumerate_distribution", "fit_discriminator", "identity_audit",
    "optimal_discriminator", "optimal_discriminator_check", "precision_at_k", "shifted_reward",
    "simulate", "slate_set_distribution",
]
