"""Schema-guided dialogue state tracking with windowed attention and span pointers."""

from .attention import EncoderConfig, attention_score_count, encode, windowed_global_attention
from .config import RunConfig, desk_config
from .dst_data import Corpus, evaluate, fuzzy_match, intent_accuracy, jga, load_corpus
from .heads import HeadConfig, enumerate_spans
from .model import init_params, predict
from .numerics import ParamStore, Tensor, grad_check
from .schema_input import Dialogue, DialogueState, ServiceSchema, Vocabulary, assemble, build_vocab
from .synth import gen_synth
from .training import pretrain_rss, train

__version__ = "0.1.0"
