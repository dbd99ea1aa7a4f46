"""Two-stream pixel-to-label utterance classification, end to end.

Grayscale frame sequences are encoded by RBM-pretrained bottleneck stacks
(one stream for the frames, one for their consecutive differences), given
temporal-derivative features, classified per frame by stream LSTMs fused
through a BLSTM, and fine-tuned jointly from pixels to labels.
"""

from .dataio import (
    FrameSequence,
    FrameSpec,
    ManifestEntry,
    StreamPair,
    SynthConfig,
    generate_synthetic,
    make_stream_pair,
    parse_manifest,
    preprocess,
    read_pgm,
)
from .evaluation import SplitSpec, accuracy, build_split, confusion
from .numeric import Rng, matmul, sample_bernoulli, sample_gaussian, sigmoid, softmax
from .rbm import (
    EncoderStack,
    PretrainConfig,
    RbmParams,
    cd1_update,
    encode,
    free_energy,
    pretrain_stack,
    propdown,
    propup,
)
from .seqnet import (
    DeltaConfig,
    LstmParams,
    SequenceNetParams,
    append_deltas,
    blstm_forward,
    clip_gradients,
    delta,
    lstm_forward,
    sequence_loss,
)
from .trainer import (
    AdaDeltaState,
    Arch,
    ModelCheckpoint,
    TrainConfig,
    adadelta_step,
    build_model,
    fit,
    make_batches,
    predict,
    train_epoch,
)

__version__ = "0.1.0"
