"""Multimodal multi-label tweet classification toolkit."""

__version__ = "0.1.0"

from .errors import (CheckpointError, ConfigError, DecodeError,
                     DimensionMismatchError, ImageError, InputError,
                     ParseError, SizeError, TrainingError, TweetfuseError,
                     ValidationError)
from .ingest import (LABEL_NAMES, NUM_LABELS, DatasetSplit, TweetRecord,
                     label_positive_rates, load_annotations, load_image,
                     placeholder_image, resolve_image, resolve_images,
                     split_dataset)
from .textclean import (clean, default_emoticons, default_stopwords,
                        remove_punctuation, remove_stopwords,
                        replace_non_ascii, strip_emoticons, tokenize)
from .subword import (EncodedText, SubwordVocabulary, build_vocabulary,
                      decode, encode, load_vocabulary, save_vocabulary)
from .model import (ModelConfig, forward, fusion_forward,
                    image_branch_forward, init_params, text_branch_forward)
from .trainer import (AdamState, EpochLog, FitResult, TrainConfig, adam_step,
                      bce_loss, binary_accuracy, fit, load_checkpoint,
                      save_checkpoint)
from .evalpost import (MetricsReport, ThresholdRule, binarize, column_roc_auc,
                       compute_threshold, mean_columnwise_auc)
