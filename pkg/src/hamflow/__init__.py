"""Hamiltonian velocity predictors, Hamiltonian score matching and Hamiltonian generative flows.

Set ``HAMFLOW_THREADS`` before import to cap BLAS threads.
"""

import os

if os.environ.get("HAMFLOW_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["HAMFLOW_THREADS"])

from .core import GaussianMixture, alpha_from_moments, make_rng, split_rng  # noqa: E402
from .dynamics import (LearnedForce, OscillationForce, PhaseState, ScoreForce, ZeroForce,  # noqa: E402
                       energy, flow_oscillation, flow_reflection, flow_zero, leapfrog, volume_check)
from .errors import (ConfigError, DegenerateError, DimensionError, DivergenceError, HamflowError,  # noqa: E402
                     IntegrityError, InvalidMixtureError, TapeError, UnsupportedError)
from .hgf import (Custom, Diffusion, FlowMatching, Oscillation, Reflection, TrainConfig,  # noqa: E402
                  analytic_hvp, constant_scale_check, fm_force_lift, sample_pair, train_hvp)
from .hsm import (HsmConfig, dsm_loss, esm_loss, hsd_estimate, hsm_loss, ism_loss, snr_diagnostic,  # noqa: E402
                  taylor_check, train_hsm)
from .net import AdamState, Mlp, Tape  # noqa: E402
from .sampler import Schedule, edm_time_grid, heun_sample, make_schedule, terminal_sample  # noqa: E402

__version__ = "0.1.0"
