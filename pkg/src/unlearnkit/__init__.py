"""Desk-scale machine unlearning toolkit.

A tiny character-level QA model, four unlearning objectives (ga,
graddiff, po, npo) under first- and second-order optimizers, one-shot
influence unlearning with an exactly solvable oracle world, and a full
evaluation metric suite, all deterministic in float64.
"""

from .data import Corpus, EvalExample, generate_corpus, load_corpus, save_corpus
from .harness import (ExperimentConfig, RunRecord, evaluate_model, finetune,
                      input_based_baseline, run_experiment, write_report)
from .influence import (QuadraticInstance, exact_retrain, fit_full,
                        influence_unlearn, influence_unlearn_lm,
                        influence_vs_soul_report)
from .losses import ga_loss, graddiff_loss, npo_loss, po_loss
from .metrics import (MetricsReport, bleu, compute_report, forget_quality,
                      ks_test, mc_accuracy, mia_auc, min_k_score, perplexity,
                      rouge_l_recall, truth_ratio)
from .model import ModelConfig, TinyLM, init_params
from .optim import (AdamWState, SophiaState, adamw_init, adamw_step,
                    newton_step, sophia_init, sophia_step)
from .unlearn import (StepRecord, UnlearnRunConfig, UnlearnTask,
                      run_unlearning)

__version__ = "0.1.0"
