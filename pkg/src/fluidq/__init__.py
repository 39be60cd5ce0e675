"""fluidq: busy periods of on-off fluid queues and first passage in Markov fluid queues.

Transform fixed points and inversion, Monte Carlo and discretized-chain
oracles, and checks of the ageing properties (complete monotonicity, DFR,
IFR, TP2) these laws are expected to have.
"""

__version__ = "0.1.0"

from .busy import (
    BusyDensity,
    BusyLT,
    BusySolution,
    busy_density,
    busy_lt_closed_form_single,
    busy_mean,
    solve_busy_lt,
)
from .exceptions import ConvergenceError, FluidQError, ModelError, NumericalError
from .model import (
    HyperExp,
    MarkovFluidModel,
    OnOffModel,
    OnOffSource,
    markov_stability,
    markov_stationary,
    onoff_stability,
)
from .reliability import HazardCurve, Verdict, dfr_check, hazard_estimate, ifr_check, tp2_check
from .sim import (
    DiscreteKernel,
    DiscretePassage,
    FluidPath,
    SampleSet,
    discretize_chain,
    first_passage_discrete,
    first_passage_samples,
    simulate_busy,
    simulate_fluid_path,
    simulate_lemma1_rv,
)
from .xform import (
    ErlangLT,
    FunctionLT,
    InversionResult,
    LaplaceTransform,
    MixtureLT,
    cm_check,
    invert_lt,
    lemma1_compose,
)

__all__ = [
    "BusyDensity", "BusyLT", "BusySolution", "ConvergenceError", "DiscreteKernel", "DiscretePassage",
    "ErlangLT", "FluidPath", "FluidQError", "FunctionLT", "HazardCurve", "HyperExp", "InversionResult",
    "LaplaceTransform", "MarkovFluidModel", "MixtureLT", "ModelError", "NumericalError", "OnOffModel",
    "OnOffSource", "SampleSet", "Verdict", "busy_density", "busy_lt_closed_form_single", "busy_mean",
    "cm_check", "dfr_check", "discretize_chain", "first_passage_discrete", "first_passage_samples",
    "hazard_estimate", "ifr_check", "invert_lt", "lemma1_compose", "markov_stability",
    "markov_stationary", "onoff_stability", "simulate_busy", "simulate_fluid_path",
    "simulate_lemma1_rv", "solve_busy_lt", "tp2_check",
]
