"""Progressive neural image compression with residual-to-image stages.

A small numpy autodiff core drives multi-stage encoder/decoder networks
whose stages predict the full image (rather than the residual), an
optional partial-context inpainting network that supplies a prior for each
patch, a bit-exact progressive stream format, and SSIM/MS-SSIM/BD-rate
evaluation.
"""

from .codec import decode_image, encode_image, pack_bits, unpack_bits
from .errors import (BitstreamError, CorruptStreamError, IntegrityError, InvalidArgument,
                     NonDeterministicError, NonFiniteError)
from .gradcheck import grad_check
from .metrics import RDCurve, bd_rate_savings, ms_ssim, ms_ssim_db, rd_sweep, ssim
from .models import build_inpainting_net, build_model, build_vanilla_net, count_params
from .tensor import Tensor, backward, no_grad
from .training import TrainConfig, loss_inpaint, loss_joint, loss_r2i, loss_residual, train
from .weights import load_weights, save_weights

__version__ = "0.1.0"
