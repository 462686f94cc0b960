"""Snow-layer tracing in radar echograms with wavelet-augmented deep supervision."""
from .accum import DensityProfile, fit_density_profile, water_equivalent_rates
from .data import LayerSet, augment, rasterize, read_egm, synthesize, write_egm
from .evaluation import EvalReport, evaluate, ods_ois, pr_curve
from .model import ModelConfig, Network, build_model
from .postproc import NmsConfig, nms_vertical
from .train import TrainConfig, load_checkpoint, save_checkpoint
from .wavelet import dwt2, filter_bank, idwt2, wavedec2, waverec2

__version__ = "0.1.0"

__all__ = [
    "DensityProfile", "EvalReport", "LayerSet", "ModelConfig", "Network", "NmsConfig", "TrainConfig",
    "augment", "build_model", "dwt2", "evaluate", "filter_bank", "fit_density_profile", "idwt2",
    "load_checkpoint", "nms_vertical", "ods_ois", "pr_curve", "rasterize", "read_egm", "save_checkpoint",
    "synthesize", "water_equivalent_rates", "wavedec2", "waverec2", "write_egm",
]
