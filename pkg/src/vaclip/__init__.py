"""Virtual-analog diode-clipper modeling with learned circuit ODEs.

A derivative network is trained against analytically-simulated clipper
circuits and solved with pluggable fixed-step schemes (forward Euler,
trapezoidal, RK4, Adams-Bashforth-Moulton), then evaluated across sampling
rates against STN and LSTM baselines.
"""

from .audio import AudioSequence, StateTrajectory
from .checkpoint import init_model, load_checkpoint, save_checkpoint
from .circuits import (Clipper1, Clipper2, DiodeParams, clipper1_rhs,
                       clipper2_rhs, make_circuit, reference_integrate,
                       required_oversample)
from .dataset import Dataset, load_dataset, synthesize_dataset
from .errors import (AudioIOError, ContractError, DimensionError,
                     IntegrationError, MetricError, OracleError,
                     TrainingError, VaclipError)
from .losses import (combined_loss, dc_loss, esr, esr_loss, magnitude_spectrum,
                     preemphasis, sdr)
from .networks import (LSTMSpec, MLPSpec, activation_eval, init_lstm_params,
                       init_mlp_params, lstm_forward, mlp_forward)
from .odenet import (ExcitationInterpolator, LSTMModel, ODENetModel, STNModel,
                     TimeNormalization, derivative_eval, forward,
                     lstm_forward_seq, run_model, set_playback_rate,
                     stn_forward)
from .presets import PRESETS, build_preset, get_preset
from .solvers import (IntegrationResult, SolverConfig, abm_integrate, fe_step,
                      integrate, rk4_step, tr_step)
from .tensor import GradientTape, Tensor, backward
from .training import OptimizerState, TrainSchedule, adam_step, fit, validate

__version__ = "0.1.0"
