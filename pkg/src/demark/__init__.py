"""Visible watermark removal with a conditional adversarial restorer."""

from .ablate import AblationReport, run_ablation
from .discriminator import (DiscriminatorConfig, PatchDiscriminator,
                            PatchScoreMap, aggregate_real_probability,
                            build_discriminator)
from .errors import (ConfigError, DataError, DemarkError, ImageDecodeError,
                     MissingFileError, NonInvertibleCompositeError,
                     NumericError, PlacementError, UnsupportedImageError)
from .generator import GeneratorConfig, UNetGenerator, build_generator
from .image_core import Image, load_image, resize, save_image
from .losses import (FeatureExtractor, IdentityExtractor, LossPlan,
                     LossWeights, RandomConvExtractor, Vgg16Extractor,
                     adversarial_d_loss, adversarial_g_loss, l1_loss,
                     parse_loss_config, perceptual_loss, total_generator_loss)
from .metrics import EvalReport, dssim, psnr, quantize, ssim
from .rng import RngStream
from .trainer import (ExtractorConfig, TrainConfig, TrainState, build_state,
                      evaluate, load_checkpoint, remove_watermark,
                      restore_state, save_checkpoint, train, train_step)
from .watermark_synthesis import (DatasetManifest, PairedSample,
                                  PlacementSpec, WatermarkAsset,
                                  build_dataset, composite, invert_composite,
                                  load_watermark_assets, sample_placement,
                                  scaled_footprint, split_identities)

__version__ = "0.1.0"
