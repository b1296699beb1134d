"""Prompt-guided image enhancement with blended learnable 3D LUTs."""

from .lut import Lut3D, apply_lut, blend_luts, identity_lut, map_coordinates, read_cube, write_cube
from .metrics import MetricReport, delta_e, psnr, rgb_to_lab, ssim
from .encoders import EncoderPair, MockEncoder, cosine_similarity, external_clip_adapter, mock_encoder
from .prompts import LabeledImage, PromptPair, classify_accuracy, prompt_loss, score, train_prompts
from .predictor import Enhancer, WeightPredictor, enhance, predict_weights, sca, simple_gate
from .losses import LossBreakdown, mse_loss, perceptual_prompt_loss, ssim_loss, total_loss
from .config import RunConfig

__version__ = "0.1.0"
