"""Freshness/throughput-aware scheduling of interfering D2D links.

Library layout:

- :mod:`aoisched.layout`    -- random layouts, path gain, channel derivation
- :mod:`aoisched.meanfield` -- steady-state fixed point and metrics
- :mod:`aoisched.simulator` -- slot-level Monte Carlo ground truth
- :mod:`aoisched.gradient`  -- implicit objective gradient via a linear solve
- :mod:`aoisched.optimize`  -- per-link cyclic minimization, projected
  gradient descent, best common probability, trade-off sweeps
- :mod:`aoisched.neural`    -- learned scheduler on location grids
- :mod:`aoisched.oracle`    -- exact tiny-scale ground truth for tests
- :mod:`aoisched.cli`       -- the `aoisched` command line tool
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, InfiniteAoIError,
                     NumericsError, SchedulerError, SolverError,
                     UnsupportedCaseError)
from .layout import (ChannelConfig, ChannelParams, DeviceLayout,
                     derive_channel, generate_layout, load_channel_config,
                     load_layout, path_gain, save_channel_config, save_layout)
from .meanfield import (EPS_P, FixedPoint, MeanFieldState, Policy,
                        conditional_success, evaluate, fixed_point,
                        link_metrics, network_metrics, objective)
from .simulator import (SimConfig, SimStats, SimTrace, empirical_metrics,
                        merge_stats, simulate, simulate_batch)
from .gradient import (GradientWorkspace, assemble_pq, finite_difference_check,
                       grad_objective, solve_dmu_dp)
from .optimize import (OptResult, ParetoPoint, block_coordinate_min,
                       lambda_grid_log5, lambda_grid_uniform, non_dominated,
                       optimal_aloha, pareto_sweep, projected_gradient)
from .neural import (GliGrids, GridConfig, NetParams, TrainConfig, TrainSample,
                     forward, infer, load_checkpoint, loss_and_grad, rasterize,
                     sample_stream, save_checkpoint, train)
from .oracle import ExactChainResult, exact_buffer_chain, grid_search_policy
