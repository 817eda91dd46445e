"""Spectral Galerkin laboratory for a slow-fast stochastic Burgers system.

The slow component is a viscous Burgers equation on [0, 1] with small
multiplicative trace-class noise; the fast component is a stochastic
reaction-diffusion equation on an accelerated clock, driven by the same
cylindrical Wiener process.  The package provides

* the sine-eigenbasis spectral toolbox (norms, heat semigroup, dealiased
  advection products),
* benchmark coefficient bundles with a structural-condition checker,
* multirate exponential-Euler simulators for the coupled, controlled,
  auxiliary, and frozen equations (compiled kernels with a pure-Python
  fallback),
* a time-average estimator for the averaged drift,
* a deterministic skeleton solver with energy and weak-continuity probes,
* a control-energy (rate function) minimizer with a closed-form
  linear-quadratic oracle,
* Monte Carlo experiment protocols with persistent, byte-reproducible
  records, and a command line front end (``sfburgers``).
"""

__version__ = "0.1.0"

from .basis import InvalidFieldError, SpectralBasis
from .model import (CoefficientSet, ConditionReport, Multiplier, NoiseSpec,
                    PairMap, ScaleParams, check_conditions, preset)
from .integrator import (AuxiliaryPair, BlowUpError, Control, TimeGrid,
                         TrajectoryPair, default_guard_radius, rng_for,
                         simulate_auxiliary, simulate_controlled,
                         simulate_pair, step_coupled)
from .frozen import (AveragedDrift, ErgodicityError, FbarBudget, FrozenRun,
                     MixingReport, estimate_fbar, mixing_diagnostic,
                     simulate_frozen)
from .skeleton import (SkeletonPath, energy_report, oscillating_controls,
                       solve_skeleton, weak_continuity_probe)
from .ratefn import (EndpointTarget, InfeasibleModeError, PathTarget,
                     RateProblem, RateResult, gradient_check, lq_oracle,
                     minimize_rate)
from .experiments import (ExperimentPlan, field_from_spec, run_averaging,
                          run_controlled_convergence, run_experiment,
                          run_khasminskii, run_ldp_tail)
from .records import RunRecord, load, persist
from ._kernels import BACKEND as kernel_backend
