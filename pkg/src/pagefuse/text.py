"""Bag-of-words text classification.

Pages are represented as binary presence vectors over the most frequent
vocabulary words and classified by a shallow dense network.  The vocabulary
is built from the training split only and travels inside the model artifact
so prediction is self-contained.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import ClassScores, DatasetManifest, PageRecord, Split, filter_split
from .nn import (
    DenseSpec,
    ModelArtifact,
    NetworkSpec,
    ReLUSpec,
    SoftmaxSpec,
    TrainConfig,
    build_network,
    make_batches,
    sgd_train,
)

__all__ = [
    "Vocabulary",
    "BowVector",
    "tokenize",
    "build_vocabulary",
    "vectorize",
    "train_text_model",
    "predict_text",
    "ModalityError",
    "DEFAULT_HIDDEN_WIDTH",
]

DEFAULT_HIDDEN_WIDTH = 256

# unicode alphanumerics; underscores and all punctuation split tokens
_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


class ModalityError(ValueError):
    """Artifact does not belong to this pipeline."""


def tokenize(text: str) -> list[str]:
    """Lowercased runs of alphanumerics; everything else is a separator."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    """Tokens ordered by descending document frequency, ties lexicographic."""

    words: tuple[str, ...]
    index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "words", tuple(self.words))
        if len(set(self.words)) != len(self.words):
            raise ValueError("vocabulary words must be distinct")
        object.__setattr__(self, "index", {w: i for i, w in enumerate(self.words)})

    @property
    def size(self) -> int:
        return len(self.words)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for word in self.words:
                fh.write(word + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls(tuple(line.rstrip("\n") for line in fh if line.rstrip("\n")))


@dataclass(frozen=True)
class BowVector:
    """Sparse binary presence vector against a fixed vocabulary."""

    vocabulary: Vocabulary
    present: frozenset[int]

    def __post_init__(self) -> None:
        if any(i >= self.vocabulary.size or i < 0 for i in self.present):
            raise ValueError("presence index out of vocabulary range")

    def dense(self) -> np.ndarray:
        out = np.zeros(self.vocabulary.size)
        if self.present:
            out[sorted(self.present)] = 1.0
        return out


def build_vocabulary(corpus: Sequence[Sequence[str]], max_size: int) -> Vocabulary:
    """Top tokens by document frequency (documents containing the token)."""
    if max_size < 1:
        raise ValueError("vocabulary size must be positive")
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    doc_freq: dict[str, int] = {}
    for tokens in corpus:
        for token in set(tokens):
            doc_freq[token] = doc_freq.get(token, 0) + 1
    ranked = sorted(doc_freq.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(tuple(w for w, _ in ranked[:max_size]))


def vectorize(vocabulary: Vocabulary, tokens: Iterable[str]) -> BowVector:
    present = frozenset(
        vocabulary.index[t] for t in tokens if t in vocabulary.index
    )
    return BowVector(vocabulary, present)


def _read_tokens(record: PageRecord) -> list[str]:
    if record.text_path is None:
        raise FileNotFoundError(f"record {record.id!r} has no text path")
    return tokenize(record.text_path.read_text(encoding="utf-8"))


def text_network_spec(vocab_size: int, hidden: int, num_classes: int, seed: int) -> NetworkSpec:
    return NetworkSpec(
        input_shape=(vocab_size,),
        layers=(
            DenseSpec(vocab_size, hidden),
            ReLUSpec(),
            DenseSpec(hidden, num_classes),
            SoftmaxSpec(),
        ),
        seed=seed,
    )


def train_text_model(
    manifest: DatasetManifest,
    vocab_size: int,
    config: TrainConfig,
    hidden: int = DEFAULT_HIDDEN_WIDTH,
) -> ModelArtifact:
    """Build the vocabulary on the train split and fit the text network.

    Records are shuffled once with the config seed, then sliced into fixed
    batches whose count must match the schedule.
    """
    train = filter_split(manifest, Split.TRAIN)
    if not train.records:
        raise ValueError("training split is empty")
    token_lists = [_read_tokens(r) for r in train.records]
    vocabulary = build_vocabulary(token_lists, vocab_size)

    inputs = np.stack([vectorize(vocabulary, t).dense() for t in token_lists])
    labels = np.array([r.label for r in train.records])
    order = np.random.default_rng([config.seed, 0]).permutation(len(labels))
    batches = make_batches(inputs[order], labels[order], config.batch_size)

    num_classes = manifest.label_set.num_classes
    net = build_network(text_network_spec(vocabulary.size, hidden, num_classes, config.seed))
    metadata = {
        "modality": "text",
        "vocabulary": list(vocabulary.words),
        "hidden": hidden,
        "requested_vocab_size": vocab_size,
        "train": {
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "max_rate": config.schedule.max_rate,
            "min_rate": config.schedule.min_rate,
            "seed": config.seed,
        },
    }
    return sgd_train(net, batches, config, metadata=metadata)


def artifact_vocabulary(artifact: ModelArtifact) -> Vocabulary:
    if artifact.modality != "text":
        raise ModalityError(f"expected a text model, got {artifact.modality!r}")
    return Vocabulary(tuple(artifact.metadata["vocabulary"]))


def predict_text(artifact: ModelArtifact, text: str) -> ClassScores:
    """Tokenize, vectorize against the embedded vocabulary, run inference.

    Empty or fully out-of-vocabulary text evaluates on the zero vector.
    """
    vocabulary = artifact_vocabulary(artifact)
    row = vectorize(vocabulary, tokenize(text)).dense()[None, :]
    probs = artifact.inference_network().forward(row, training=False)
    return ClassScores(probs[0])


def predict_text_record(artifact: ModelArtifact, record: PageRecord) -> ClassScores:
    if record.text_path is None:
        raise FileNotFoundError(f"record {record.id!r} has no text path")
    return predict_text(artifact, record.text_path.read_text(encoding="utf-8"))
