"""Conditional score-based synthesis of missing image modalities.

One network learns every conditional distribution p(missing | observed)
over a fixed set of co-registered image modalities.  Training perturbs
complete samples with a variance-preserving diffusion and regresses the
injected noise on the missing channels only; sampling integrates the
reverse-time dynamics with the observed channels clamped.  Gaussian
worlds with closed-form conditional scores serve as ground truth for
end-to-end verification.
"""

from .errors import (ConfigError, ContractError, CorruptionError, DomainError,
                     FormatError, MmsynthError, NumericalError, ShapeError,
                     TrainingDiverged)
from .fileio import (load_checkpoint, read_dataset, read_tensor, read_world,
                     save_checkpoint, write_dataset, write_tensor, write_world)
from .metrics import MetricsReport, eval_report, mae, psnr, ssim
from .modality import (ModalitySet, Partition, enumerate_partitions,
                       format_partition, partition_from_missing)
from .network import NetConfig, init_params
from .rng import derive_seed
from .sampling import (NetScoreSource, OracleScoreSource, SamplerConfig,
                       generate, generate_many, uncertainty_map)
from .sde import VPSDE
from .training import TrainConfig, TrainState, dsm_loss, make_train_state, train
from .worlds import (GaussianWorld, ShapeWorld, build_world, gaussian_pair,
                     gaussian_trio, make_shape_dataset)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "CorruptionError", "DomainError",
    "FormatError", "MmsynthError", "NumericalError", "ShapeError",
    "TrainingDiverged",
    "load_checkpoint", "read_dataset", "read_tensor", "read_world",
    "save_checkpoint", "write_dataset", "write_tensor", "write_world",
    "MetricsReport", "eval_report", "mae", "psnr", "ssim",
    "ModalitySet", "Partition", "enumerate_partitions", "format_partition",
    "partition_from_missing",
    "NetConfig", "init_params", "derive_seed",
    "NetScoreSource", "OracleScoreSource", "SamplerConfig",
    "generate", "generate_many", "uncertainty_map",
    "VPSDE",
    "TrainConfig", "TrainState", "dsm_loss", "make_train_state", "train",
    "GaussianWorld", "ShapeWorld", "build_world", "gaussian_pair",
    "gaussian_trio", "make_shape_dataset",
    "__version__",
]
