"""Voice conversion trained from a frozen speaker verifier (verification-to-synthesis)."""

from .corpus import Corpus, CorpusSpec, Utterance, append_deltas, convert_f0, f0_stats, one_hot, synth_corpus
from .evaluation import deception_metrics, emit_report, mcd, retention_mse
from .losses import LossValue, mse_loss, sce_loss, v2s_loss
from .models import ArchSpec, build_model, load_model, preset, save_model
from .nncore import AdaGradState, Network, adagrad_step, gradient_check, network_backward, network_forward
from .pipeline import TrainingConfig, TrainingHistory, train_asr, train_asv, train_parallel_vc, train_v2s

__version__ = "0.1.0"
