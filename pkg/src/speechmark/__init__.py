"""Spoken-language dementia screening from fused perplexity, i-vector and x-vector features."""

from .config import RunConfig, load_config
from .corpus import AudioSignal, Label, Recording, load_manifest, normalize_transcript, read_audio
from .evaluation import MetricsReport, run_ablation, run_cv
from .frontend import FrontendConfig, cmvn, extract_mfcc
from .fusion import BlockLayout, FusionVector, SvmModel, fuse, predict, train_svm
from .gmm import GmmModel, train_ubm
from .ivector import BaumWelchStats, TotalVariabilityModel, accumulate_stats, extract_ivector, train_t_matrix
from .ngram import NgramModel, PerplexityPair, Smoothing, score_case, train_ngram
from .xvector import TrainOptions, XvectorConfig, XvectorNet, train_xvector

__version__ = "0.1.0"
