"""Attribute-highlighted text embeddings for open-vocabulary detection.

The pipeline: extract attribute words from a caption, locate them in the
token stream, encode the caption twice (default attention mask and an
attribute-restricted one), and linearly compose the two pooled embeddings
with a trainable scalar triplet.  A synthetic dynamic-vocabulary
benchmark with class-agnostic NMS and mAP measures whether highlighting
attributes helps tell fine-grained captions apart.
"""

__version__ = "0.1.0"

from .compose import (
    WeightTriplet,
    compose,
    decompose_category,
    load_triplet,
    save_triplet,
    transfer_triplet,
)
from .encoder import (
    EncodedPair,
    Encoder,
    EncoderConfig,
    EncoderConfigError,
    attention,
    encode,
    encode_pair,
    init_encoder,
    load_encoder,
    row_softmax,
    save_encoder,
)
from .evaluation import (
    EvalMode,
    EvalReport,
    EvalSettings,
    PredictionBox,
    class_agnostic_nms,
    compute_map,
    evaluate,
    iou,
    precision_recall,
    score,
)
from .extraction import (
    AttributeList,
    ExtractionPrompt,
    ExtractionTransportError,
    LlmClient,
    LlmClientConfig,
    ReplyFormatError,
    default_lexicon,
    default_prompt,
    extract_llm,
    extract_rule_based,
    load_lexicon,
    parse_llm_output,
)
from .benchmark import (
    EvalInstance,
    ObjectVocabulary,
    SyntheticObject,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .fitting import (
    FitBatch,
    FitConfig,
    FitError,
    FitTrace,
    build_batch,
    fit,
    fit_batch,
    fit_loss,
    grad_triplet,
    make_batch,
)
from .masks import (
    NEG_INF,
    MaskDegenerateRowError,
    RestrictAxis,
    attribute_mask_1d,
    bert_attribute_mask,
    bert_default_mask,
    clip_attribute_mask,
    clip_default_mask,
    token_mask_1d,
)
from .tokens import (
    AttributePositions,
    CaptionTooLongError,
    Flavor,
    Kind,
    TokenSequence,
    match_positions,
    tokenize,
)
