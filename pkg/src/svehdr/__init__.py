"""Single-shot dual-exposure Bayer to HDR radiance reconstruction."""

from .autograd import Adam, CosineSchedule, Tensor, backward, conv2d, grad_check, no_grad
from .errors import (ConfigError, DimensionError, FormatError, NumericError, SveHdrError, TapeError,
                     ValidationError)
from .losses import LossValue, color_loss, l1_loss, total_loss
from .metrics import MetricReport, PuTable, compute_metrics, pu_encode
from .network import ModelConfig, ModelWeights, build_model, count_params, estimate_flops, extract_betas, model_forward
from .radiometry import Crf, NetworkDomain, RadianceImage, exposure_mask, to_radiance, tonemap_display
from .svc import HeadSpec, first_layer_apply, svc_forward
from .sve import BayerFrame, ExposureMap, ExposurePair, exposure_map, simulate_dual_time

__version__ = "0.1.0"
