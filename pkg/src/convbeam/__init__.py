"""convbeam: pose-steered maximum-directivity beamforming for wearable arrays.

A numpy/scipy toolkit for conversational focus: steer a distortionless
maximum-DI beamformer over a head-worn microphone array using tracked
poses, process streams frame by frame with weighted overlap-add, score
the result with SNR-family metrics over voice-active segments, simulate
free-field ground-truth scenes, and associate head detections into
identity-labeled tracklets.
"""

from .atf import (
    AtfFormatError,
    AtfSet,
    Direction,
    IsotropicCovariance,
    bin_frequencies,
    fibonacci_directions,
    isotropic_covariance,
    load_atf_set,
    nearest_direction,
    write_atf_set,
)
from .audio_io import UnsupportedCodecError, read_wav, write_wav
from .beamformer import (
    BeamformerWeights,
    DegenerateTargetError,
    DistortionlessTarget,
    SingularCovarianceError,
    apply_weights,
    delay_and_sum_weights,
    directivity_index_db,
    make_target,
    max_di_weights,
)
from .metrics import (
    TestCase,
    UndefinedMetricError,
    VaSegments,
    align_to_reference,
    gcc_phat_delay,
    load_va,
    seg_snr_db,
    select_segments,
    si_sdr_db,
    snr_db,
)
from .pipeline import PipelineConfig, enhance, enhance_arrays, evaluate, simulate, track_file
from .simscene import (
    ArrayGeometry,
    SceneRender,
    build_scene,
    diffuse_noise,
    free_field_atf_set,
    render_moving_source,
    speech_shaped_noise,
)
from .steering import Pose, PoseGapError, PoseTrack, pose_at, relative_direction, steer
from .tracker import (
    Detection,
    MotionTransform,
    Tracker,
    TrackerConfig,
    Trajectory,
    assign,
    finalize,
    iou,
    match_cost,
)
from .wola import SpectralFrame, StftConfig, analyze, process_stream, sqrt_hann_window, synthesize

__version__ = "0.1.0"
