"""cropopt: caption- and aesthetics-guided image cropping.

Find the crop of an image that best matches a natural-language caption and an
aesthetic criterion by optimizing the crop parameters (center x, center y,
scale s) directly: the crop window is resampled differentiably from a blurred
multi-scale pyramid, scored, and refined with annealed multi-restart L-BFGS.
"""

from .errors import (CropOptError, DegenerateSizeError, DesyncError,
                     EmptyCaptionError, ImageFormatError,
                     IncompatibleScorerError, NumericError, PipelineError,
                     ProtocolError, ScorerError, ScorerTimeoutError,
                     VocabularyError)
from .imagecore import (BlurPolicy, Image, Pyramid, PyramidLevel,
                        build_pyramid, gaussian_blur, load_image, resize,
                        save_image)
from .objective import (CaptionBag, LossReport, Scorer, ScorerOutput,
                        Vocabulary, aesthetic_loss, bag_from_text,
                        caption_loss, tokenize, total_loss)
from .pipeline import (CropRun, RestartRecord, RunConfig, ScaleRecord,
                       aggregate_restarts, anneal_scale, evaluate_objective,
                       landscape_grid, perturb, restart_solve, run,
                       schedule_scales, solve_restarts, trace_lines,
                       write_trace)
from .sampler import (CropParams, CropResult, bilinear_sample, box_iou,
                      clip_params, lattice_clearance, multiscale_crop,
                      theta_to_pixel_box)
from .scorerproto import (PROTOCOL_VERSION, ScoreRequest, ScoreResponse,
                          WireScorer, connect_scorer, decode_request,
                          decode_response, encode_request, encode_response,
                          serve_echo)
from .solver import SolverConfig, SolveTrace, lbfgs_minimize
from .synthetic import (BowlScorer, ConstantScorer, SoftCaptioner,
                        SyntheticScorer, ThirdsAesthetic, beacon_image,
                        default_vocabulary, smooth_noise_image)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
