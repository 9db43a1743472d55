"""Scale-consistent depth and ego-motion toolkit: warping, losses, gradients,
direct refinement, synthetic scenes and evaluation protocols."""

from ._kernels import BACKEND
from .errors import (BehindCameraError, DegenerateScaleError, DimensionError,
                     EmptyMaskError, EmptyValidSetError, IllConditionedLogError,
                     InvalidDepthError, InvalidSceneError, NoValidSubsequenceError,
                     ScdepthError)
from .evalkit import (Trajectory, align_global_scale, align_per_frame_scale, ate_5frame,
                      chain_poses, eigen_depth_metrics, kitti_odom_errors)
from .geometry import (DepthMap, Image, Intrinsics, PoseSE3, Twist, compose, exp_twist,
                       lift, log_pose, project, warp_pair)
from .gradients import GradReport, fd_gradient, loss_gradients
from .losses import (LossReport, LossWeights, depth_inconsistency, gc_loss,
                     masked_photometric_loss, photometric_loss, smoothness_loss,
                     total_loss, weight_mask)
from .refine import RefineConfig, RefineTrace, refine_pair, refine_sequence
from .synth import SceneSpec, render

__version__ = "0.1.0"
