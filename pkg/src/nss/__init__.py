"""Batched nested sampling with hit-and-run slice sampling, plus baselines and theory."""
from .core import (CovarianceMetric, RngStream, TargetError, TargetModel, draw_direction,
                   estimate_metric)
from .hrss import SliceConfig, SliceStepReport, hrss_replace, hrss_replace_batch, slice_step
from .metrics import kish_ess, mmd, sliced_w2
from .nested import (DeadRecord, EvidenceEstimate, NsConfig, NsState, evidence, ns_init, ns_step,
                     posterior_resample, run_nested, should_terminate, simulate_volumes)
from .smc import SmcConfig, SmcState, next_temperature, run_smc, smc_stage
from .targets import make_target

__version__ = "0.1.0"
