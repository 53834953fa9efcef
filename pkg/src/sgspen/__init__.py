"""Energy-network structured prediction trained from black-box rewards.

The training signal is a scalar reward over discrete outputs; no labels are
needed. Prediction minimizes a learned energy by exponentiated gradient
descent on per-variable simplexes; training contrasts the model's own
(noisy) prediction with a reward improvement found by truncated randomized
search, hinging the energy gap against the scaled reward gap.
"""

from .beam import BeamConfig, iterative_beam_search
from .energies import EnergyModel, MultiLabelEnergy, ProgramEnergy, SequenceEnergy
from .inference import InferenceConfig, Trajectory, infer, predict, sample
from .outputs import (
    DiscreteOutput,
    Logits,
    OutputSpace,
    RelaxedOutput,
    one_hot,
    round_output,
    uniform_logits,
)
from .rewards import (
    IouReward,
    OracleF1Reward,
    RewardFunction,
    RuleBasedReward,
    RuleSet,
    f1_reward,
    f1_score,
    iou_reward,
    rule_reward,
)
from .search import SearchConfig, SearchOutcome, truncated_search
from .seeding import stream
from .tensor import Graph, ParamSet, finite_diff_check, softmax
from .trainer import (
    ConstraintRecord,
    RunHistory,
    TrainConfig,
    dvn_step,
    evaluate_mean_reward,
    r_spen_step,
    semi_supervised_wrap,
    sg_spen_step,
    train,
)

__version__ = "0.1.0"
