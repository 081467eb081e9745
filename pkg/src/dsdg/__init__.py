"""Paired live/spoof image generation and depth-uncertainty anti-spoofing."""

from .backbones import BackboneSpec, CDConv2d, build_backbone, cdc_conv, count_parameters
from .data import (
    DEPTH_SIZE,
    PairedSample,
    SampleRecord,
    build_pairs,
    load_manifest,
    synth_toy_dataset,
    write_manifest,
)
from .generator import (
    ChannelMeanEmbedder,
    GenLossWeights,
    GenTrainConfig,
    LatentGaussian,
    LatentTriple,
    SpoofPairVAE,
    generate_pairs,
    train_generator,
)
from .metrics import EvalReport, ScoredSample, confusion, eer, error_rates, hter, run_protocol
from .training import FasLossWeights, FasTrainConfig, compose_batch, split_counts, train_fas
from .uncertainty import (
    DepthUncertaintyHead,
    DepthUncertaintyModel,
    UncertainDepth,
    depth_kl_loss,
    infer_depth,
    sample_depth,
)

__version__ = "0.1.0"
