"""Forecast-augmented Markov decision processes over linear state space models.

Point forecasts of an autoregressive weather state are modeled as a
martingale in the forecast origin, driven by a triangular array of
independent disturbances. The forward forecast vector is then a Markov chain
that can sit inside a regulator's state, and the discounted linear-quadratic
machinery prices exactly how much the rolling forecasts are worth.
"""

from .energy import (
    EnergyParams,
    SystemBundle,
    build_dynamic_forecast,
    build_no_forecast,
    expected_cost_forecast,
    expected_cost_no_forecast,
    improvement_d,
    initial_second_moment_forecast,
    roll_noise_cov,
    sweep_grid,
    write_sweep_csv,
)
from .lqg import (
    DiscountedLqr,
    RiccatiSolution,
    lyapunov_stationary_cov,
    optimal_action,
    riccati_solve,
    value_at,
)
from .mmfe import (
    DisturbanceSchedule,
    EpsilonArray,
    ForecastVector,
    FreshNoise,
    IncompleteArrayError,
    InvalidHorizonError,
    MmfeModel,
    conditional_forecast_roll,
    conditional_weather_step,
    forecast,
    forecast_vector,
    martingale_difference,
    roll_forecast_vector,
    sample_epsilon_array,
)
from .simulate import (
    CostEstimate,
    SimConfig,
    simulate_discounted_cost,
    simulate_improvement_paired,
    simulate_mmfe_joint_path,
)
from .tabular import (
    Solution,
    TabularMdp,
    backward_induction,
    brute_force_policy_enum,
    discretize_dynamic_forecast,
    discretize_no_forecast,
    discretize_static_forecast,
    scenario_tree_costs,
)

__version__ = "0.1.0"
