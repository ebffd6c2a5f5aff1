"""Multi-camera bird's-eye-view detection and tracking.

Camera features are lifted into a shared BEV/voxel frame (perspective
homography, bilinear voxel sampling, depth splatting, or deformable
sampling), decoded into ground-plane detections, and tracked online with
a motion-cue/Kalman association.  A built-in multi-camera simulator with
oracle features and a full CLEAR-MOT/IDF1 metric suite close the loop
without any learned components.
"""

__version__ = "0.1.0"

from .errors import BevTrackError

__all__ = ["BevTrackError", "__version__"]
