"""Joint definition generation and simplification with partially shared decoders."""

__version__ = "0.1.0"

from .autograd import Parameter, ShapeError, Tensor
from .data import (
    BLANK,
    BOS,
    EOS,
    PAD,
    SEP,
    UNK,
    CorruptionConfig,
    DictionaryEntry,
    SimpleSentence,
    Vocab,
    build_input,
    corrupt,
    load_dictionary,
    load_simple_corpus,
    make_batches,
    tokenize,
)
from .model import ComplexityFlag, ModelConfig, SimpDefinerModel
from .training import TrainConfig, TrainState, lr_schedule, train
from .generation import (
    GenerationConfig,
    GenerationResult,
    beam_search,
    generate_complex,
    generate_simple,
)
from .metrics import EvalReport, LevelLexicon, bleu, level_proportions, sari, similarity_proxy

__all__ = [
    "BLANK",
    "BOS",
    "EOS",
    "PAD",
    "SEP",
    "UNK",
    "ComplexityFlag",
    "CorruptionConfig",
    "DictionaryEntry",
    "EvalReport",
    "GenerationConfig",
    "GenerationResult",
    "LevelLexicon",
    "ModelConfig",
    "Parameter",
    "ShapeError",
    "SimpDefinerModel",
    "SimpleSentence",
    "Tensor",
    "TrainConfig",
    "TrainState",
    "Vocab",
    "beam_search",
    "bleu",
    "build_input",
    "corrupt",
    "generate_complex",
    "generate_simple",
    "level_proportions",
    "load_dictionary",
    "load_simple_corpus",
    "lr_schedule",
    "make_batches",
    "sari",
    "similarity_proxy",
    "tokenize",
    "train",
]
