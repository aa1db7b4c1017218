"""Game-theoretic CTU-level rate control on a hyperbolic RD model."""

from .rd_model import DEFAULT_PARAMS, CodingResult, DomainError, RdParams
from .nash import BargainCtu, InfeasibleError, NewtonConfig, nash_allocate, solve_eta
from .allocator import AllocatorConfig, InvariantViolation, RateController, Source
from .encoder_sim import NoiseModel, SequenceTrace, generate_trace, read_trace, run_sequence, write_trace

__version__ = "0.1.0"
