from typing import Dict, Any, List, Optional, Sequence, Tuple
import logging
import os
import sys

import numpy as np
from tqdm import tqdm

# Add parent directory to path to import config.py from project root
parent_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if parent_dir not in sys.path:
    sys.path.insert(0, parent_dir)

from checkpoint import load_checkpoint
from config import Config
from corpus import GoldTree, Vocab, load_gold_trees, load_lm_corpus, load_predicted_trees, load_sentences, wsj10_filter
from errors import ConfigError, CorpusError, TreeFormatError
from lm_model import PRPNLanguageModel
from property_suite import OracleReport, run_suite
from run_config import ExperimentConfig, RunConfig, load_experiment_config, validate_experiment_config
from storage import RunStorage
from trainer import Trainer, evaluate_sentences, evaluate_stream, metric_name_for, nll_to_metric
from tree_ops import BASELINES, baseline_f1, binary_spans, corpus_f1, decode_sentence, tree_to_string, upper_bound_f1

logger = logging.getLogger(__name__)


def sentence_tokens(line: str, mode: str, lowercase: bool = False) -> List[str]:
    """Tokens of one input line: characters in char mode, space-separated words otherwise"""
    line = line.rstrip("\n")
    if lowercase:
        line = line.lower()
    if mode == "char":
        return list(line)
    return [word for word in line.split(" ") if word]


class ExperimentPipeline:
    """Main orchestrator behind the CLI commands"""

    def __init__(self, run: RunConfig, storage: Optional[RunStorage] = None, save: bool = True):
        """
        Args:
            run: parsed CLI invocation
            storage: run registry (opened lazily from Config.DB_PATH when None)
            save: whether to record finished runs in the registry
        """
        self.run = run
        self.save = save
        self._storage = storage
        self.current_run_id = None

    @property
    def storage(self) -> RunStorage:
        if self._storage is None:
            self._storage = RunStorage()
        return self._storage

    def experiment_config(self) -> ExperimentConfig:
        return load_experiment_config(self.run.config_path, self.run.overrides, self.run.seed)

    def _record(self, command: str, config: Dict[str, Any], result: Dict[str, Any]):
        if self.save:
            self.current_run_id = self.storage.save_run(command, config, result)

    # ------------------------------------------------------------------
    # Models
    # ------------------------------------------------------------------

    def load_model_from_checkpoint(self, path: str) -> Tuple[PRPNLanguageModel, Vocab, ExperimentConfig]:
        """Rebuild a model, its vocabulary and experiment config from a checkpoint"""
        ckpt = load_checkpoint(path)
        config = validate_experiment_config(ckpt.config)
        model = PRPNLanguageModel(config.model, seed=config.seed)
        model.load_state_dict(ckpt.tensors)
        if ckpt.vocab is None:
            raise CorpusError(f"Checkpoint '{path}' holds no vocabulary", path=path)
        vocab = Vocab.from_dict(ckpt.vocab)
        logger.info("📦 Loaded %s (%d parameters)", path, model.num_parameters())
        return model, vocab, config

    def _model_for(self, checkpoint: Optional[str], vocab_source: Optional[str] = None):
        """Trained model from a checkpoint, or a fresh one sized by a corpus"""
        if checkpoint:
            return self.load_model_from_checkpoint(checkpoint)
        config = self.experiment_config()
        source = vocab_source or config.data.train
        if not source:
            raise ConfigError("No checkpoint given and data.train is unset; cannot build a vocabulary")
        if config.trainer.unit == "sentences":
            _, vocab = load_sentences(source, lowercase=config.data.lowercase)
        else:
            _, vocab = load_lm_corpus(source, config.model.mode)
        vocab.freeze()
        model = PRPNLanguageModel(config.model, vocab_size=len(vocab), seed=config.seed)
        logger.warning("⚠️  No checkpoint given, using an untrained model")
        return model, vocab, config

    # ------------------------------------------------------------------
    # Commands
    # ------------------------------------------------------------------

    def train(self, resume: Optional[str] = None) -> Dict[str, Any]:
        """
        Train a model on data.train, validating on data.valid every epoch.

        Returns:
            Summary with the best validation metric and checkpoint paths
        """
        config = self.experiment_config()
        data = config.data
        if not data.train or not data.valid:
            raise ConfigError("Training needs data.train and data.valid", train=data.train, valid=data.valid)

        print("🔧 Loading corpora...", file=sys.stderr)
        if config.trainer.unit == "sentences":
            train_data, vocab = load_sentences(data.train, lowercase=data.lowercase)
            vocab.freeze()
            valid_data, _ = load_sentences(data.valid, vocab, lowercase=data.lowercase)
        else:
            train_data, vocab = load_lm_corpus(data.train, config.model.mode)
            vocab.freeze()
            valid_data, _ = load_lm_corpus(data.valid, config.model.mode, vocab)

        model = PRPNLanguageModel(config.model, vocab_size=len(vocab), seed=config.seed)
        output_dir = os.path.join(self.run.output_dir, config.name)
        trainer = Trainer(config, model, vocab, train_data, valid_data, output_dir)
        if resume:
            trainer.resume(resume)

        print(f"🚀 Training {config.name}: {model.num_parameters()} parameters, vocab {len(vocab)}", file=sys.stderr)
        outcome = trainer.train()
        print(f"✅ Training complete: best {outcome.metric_name} {outcome.best_metric:.4f}", file=sys.stderr)

        result = {
            "metric_name": outcome.metric_name,
            "metric_value": outcome.best_metric,
            "epochs": outcome.epochs,
            "steps": outcome.steps,
            "lr": outcome.lr,
            "metric_log": outcome.metric_log,
            "best_checkpoint": outcome.best_checkpoint,
            "last_checkpoint": outcome.last_checkpoint,
        }
        self._record("train", config.model_dump(mode="json"), result)
        return result

    def eval_lm(self, checkpoint: Optional[str] = None, corpus_path: Optional[str] = None) -> Dict[str, Any]:
        """BPC (char) or PPL (word) of a corpus; defaults to data.test, then data.valid"""
        model, vocab, config = self._model_for(checkpoint)
        path = corpus_path or config.data.test or config.data.valid
        if not path:
            raise ConfigError("No corpus to evaluate: pass --corpus or set data.test")

        tcfg = config.trainer
        if tcfg.unit == "sentences":
            sentences, _ = load_sentences(path, vocab, lowercase=config.data.lowercase)
            nll = evaluate_sentences(model, sentences, tcfg.eval_batch_size)
            tokens = sum(len(s) - 1 for s in sentences if len(s) >= 2)
        else:
            ids, _ = load_lm_corpus(path, config.model.mode, vocab)
            nll = evaluate_stream(model, ids, tcfg.eval_batch_size, tcfg.bptt, Config.NUM_WORKERS)
            tokens = int(ids.size)

        name = metric_name_for(config.model.mode)
        value = nll_to_metric(nll, config.model.mode)
        result = {name: value, "metric_name": name, "metric_value": value, "nll": nll, "tokens": tokens, "corpus": path}
        self._record("eval-lm", config.model_dump(mode="json"), result)
        return result

    def sentence_profiles(
        self,
        model: PRPNLanguageModel,
        vocab: Vocab,
        sentences: Sequence[Sequence[str]],
        batch_size: int,
    ) -> List[np.ndarray]:
        """Distance profiles of tokenized sentences, computed in padded batches"""
        profiles: List[np.ndarray] = []
        show = sys.stderr.isatty()
        for start in tqdm(range(0, len(sentences), batch_size), desc="parsing", disable=not show, leave=False):
            chunk = [vocab.encode(tokens).tolist() for tokens in sentences[start : start + batch_size]]
            profiles.extend(model.sentence_distances(chunk))
        return profiles

    def parse(self, checkpoint: Optional[str], input_path: str) -> List[str]:
        """Bracketed binary trees, one per non-empty input line"""
        model, vocab, config = self._model_for(checkpoint)
        if not os.path.exists(input_path):
            raise CorpusError(f"Input file '{input_path}' does not exist", path=input_path)
        with open(input_path, "r", encoding="utf-8") as f:
            sentences = [
                tokens for tokens in (sentence_tokens(line, config.model.mode, config.data.lowercase) for line in f)
                if tokens
            ]
        profiles = self.sentence_profiles(model, vocab, sentences, config.trainer.eval_batch_size)
        return [
            tree_to_string(decode_sentence(tokens, profile), tokens)
            for tokens, profile in zip(sentences, profiles)
        ]

    def _gold_set(self, config: ExperimentConfig, gold_path: Optional[str]) -> List[GoldTree]:
        path = gold_path or config.data.gold_trees
        if not path:
            raise ConfigError("No gold trees: pass --gold or set data.gold_trees")
        trees = [tree for tree in load_gold_trees(path, lowercase=config.data.lowercase) if tree.tokens]
        if config.data.wsj10:
            trees = wsj10_filter(trees)
        if not trees:
            raise CorpusError(f"No usable gold trees in '{path}'", path=path)
        return trees

    def eval_parse(
        self,
        checkpoint: Optional[str] = None,
        gold_path: Optional[str] = None,
        predictions_path: Optional[str] = None,
        aggregate: str = "sentence",
        seed: int = 0,
    ) -> Dict[str, Any]:
        """
        Unlabeled F1 of predicted trees against gold, with trivial baselines.

        Predictions come from a file of bracketed trees when given, otherwise
        the model parses the gold sentences.
        """
        if predictions_path:
            config = self.experiment_config()
            gold = self._gold_set(config, gold_path)
            predicted = load_predicted_trees(predictions_path)
            if len(predicted) != len(gold):
                raise TreeFormatError(
                    f"{len(predicted)} predicted trees for {len(gold)} gold trees",
                    predicted=len(predicted),
                    gold=len(gold),
                )
            pred_spans = []
            for index, ((tokens, spans), tree) in enumerate(zip(predicted, gold)):
                if len(tokens) != len(tree.tokens):
                    raise TreeFormatError(
                        f"Prediction {index} has {len(tokens)} tokens, gold has {len(tree.tokens)}",
                        index=index,
                    )
                pred_spans.append(spans)
        else:
            model, vocab, config = self._model_for(checkpoint)
            gold = self._gold_set(config, gold_path)
            profiles = self.sentence_profiles(model, vocab, [tree.tokens for tree in gold], config.trainer.eval_batch_size)
            pred_spans = [
                binary_spans(decode_sentence(tree.tokens, profile))
                for tree, profile in zip(gold, profiles)
            ]

        report = corpus_f1(
            ((pred, tree.spans, len(tree.tokens)) for pred, tree in zip(pred_spans, gold)),
            mode=aggregate,
        )
        baselines = {kind: baseline_f1(gold, kind, seed=seed, mode=aggregate)["f1"] for kind in BASELINES}
        baselines["upper_bound"] = upper_bound_f1(gold, mode=aggregate)["f1"]
        result = {
            **report,
            "aggregate": aggregate,
            "baselines": baselines,
            "metric_name": "f1",
            "metric_value": report["f1"],
        }
        self._record("eval-parse", config.model_dump(mode="json"), result)
        return result

    def inspect_distances(
        self,
        checkpoint: Optional[str],
        text: Optional[str] = None,
        input_path: Optional[str] = None,
    ) -> List[List[Tuple[str, float]]]:
        """Per-token distances of each input line"""
        model, vocab, config = self._model_for(checkpoint)
        if text is not None:
            lines = text.split("\n")
        elif input_path:
            if not os.path.exists(input_path):
                raise CorpusError(f"Input file '{input_path}' does not exist", path=input_path)
            with open(input_path, "r", encoding="utf-8") as f:
                lines = f.read().split("\n")
        else:
            raise ConfigError("inspect-distances needs --text or --input")

        sentences = [tokens for tokens in (sentence_tokens(line, config.model.mode) for line in lines) if tokens]
        if not sentences:
            raise CorpusError("No tokens to inspect")
        profiles = self.sentence_profiles(model, vocab, sentences, config.trainer.eval_batch_size)
        return [
            [(token, float(d)) for token, d in zip(tokens, profile)]
            for tokens, profile in zip(sentences, profiles)
        ]

    def check_properties(self, seed: int = 0, trials: Optional[int] = None) -> List[OracleReport]:
        print("🔍 Running property suite...", file=sys.stderr)
        reports = run_suite(seed=seed, trials=trials, workers=Config.NUM_WORKERS)
        failed = [report.name for report in reports if not report.passed]
        if failed:
            print(f"❌ Failing properties: {', '.join(failed)}", file=sys.stderr)
        else:
            print(f"✅ All {len(reports)} properties held", file=sys.stderr)
        return reports
