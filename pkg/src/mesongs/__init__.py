"""Post-training compression codec for 3D Gaussian splatting scenes."""

from .container import (CompositionReport, EncoderConfig, MesonContainer,
                        decode, encode, inspect)
from .errors import (CorruptStreamError, DataError, FormatError,
                     PipelineError)
from .gaussian_model import (Camera, GaussianCloud, activate, load_cameras,
                             load_ply, save_cameras, save_ply)
from .metrics import QualityReport, psnr, ssim
from .octree import Octree, VoxelGrid, decode_octree, encode_octree, voxelize
from .pruning import (ImportanceScores, compute_importance, prune,
                      quantile_curve, view_dependent_scores,
                      view_independent_scores)
from .quantization import (Codebook, QuantizedChannel, block_dequantize,
                           block_quantize, vq_decode, vq_encode, vq_fit)
from .renderer import RenderOutput, eval_sh, project_gaussian, render
from .synthetic import orbit_cameras, synthetic_cloud, synthetic_scene
from .transform import (RahtCoefficients, RahtSchedule, build_raht_schedule,
                        euler_to_quat, euler_to_rotmat, quat_to_euler,
                        quat_to_rotmat, raht_forward, raht_inverse)

__version__ = "0.1.0"
