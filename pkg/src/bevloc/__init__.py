"""Map-based vehicle localization from BEV LiDAR intensity images.

Online sweeps are accumulated into a bird's-eye-view intensity grid,
embedded by a small fully-convolutional network (or passed through raw),
and matched exhaustively against a prior intensity map with an
FFT-accelerated masked correlation; the resulting score volume is fused
with odometry and GPS in a recursive histogram filter.  A synthetic
world simulator provides ground truth for training and verification.
"""

from .pose import Pose2D, compose, inverse, inverse_compose, transform_points, wrap_angle
from .grid import (BevGrid, GridGeometry, Sweep, crop_window, load_map,
                   rasterize, save_map, warp)
from .matching import (ScoreVolume, SearchWindow, masked_score,
                       score_volume_fft, score_volume_spatial)
from .embed import (FcnParams, LayerSpec, default_arch, forward, init_params,
                    load_checkpoint, save_checkpoint)
from .filtering import (BeliefGrid, FilterError, GpsObservation,
                        LocalizerConfig, LocalizerState, MotionModel,
                        gps_log_likelihood, hard_argmax, make_initial_state,
                        predict, soft_argmax, step, update)
from .sim import (DriveStep, NoiseConfig, SensorConfig, TrajectorySpec,
                  WorldConfig, generate_map, gt_trajectory, load_drive,
                  save_drive, simulate_drive)
from .training import (TrainConfig, TrainSample, build_samples, loss,
                       loss_backward, train)
from .evaluate import (FrameErrors, frame_errors, median_lower, run_sequence,
                       sequence_metrics)

__version__ = "0.1.0"
