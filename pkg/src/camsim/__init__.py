"""Camera-setting simulation on raw images.

Re-renders a raw frame as if captured with a different exposure time, ISO
and f-number: a physical exposure multiplier with a learned linear
refinement, a noise-conditioned denoiser, an f-number-conditioned defocus
network, and re-noising under the target noise model.
"""

from .errors import (CamsimError, DegenerateDataError, DimensionError, FormatError, NumericError,
                     ParameterError, SettingsRangeWarning, StateError)
from .raw import (ExposureSettings, NoiseLevelFunction, RawImage, compute_psnr, compute_ssim,
                  overexposure_mask, pack_bayer, unpack_bayer)
from .exposure import (ExposureCorrection, ExposureScale, apply_exposure, compute_alpha,
                       fit_exposure_correction, fnumber_to_stop)
from .noise import (DenoiserNet, NoiseLevelMap, denoise, noise_level_map, propagate_nlf,
                    synthesize_noise, train_denoiser)
from .aperture import (AdaptiveApertureLayer, ApertureNet, AttentionGate, adaptive_aperture_layer,
                       aperture_forward, apply_attention, channel_attention, spatial_attention,
                       train_aperture)
from .training import TrainSchedule
from .dataset import (REFERENCE_SETTINGS, SceneSequence, SyntheticScene, generate_synthetic_scene,
                      make_settings, read_raw, read_sequence, render_with_settings,
                      synthetic_dataset, write_raw, write_sequence)
from .pipeline import (EvalReport, SimulateOptions, SimulatorModel, evaluate, load_model,
                       save_model, select_pairs, simulate, train)

__version__ = "0.1.0"
