"""Dialogue data model, corpus construction and sample extraction."""
from .data import (
    AGENT,
    SPLITS,
    USER,
    DataError,
    DecisionSample,
    Dialogue,
    PredictionSample,
    Turn,
    Utterance,
    check_dialogue,
    dumps_corpus,
    parse_corpus,
    split_dialogues,
    utterances_from_json,
    write_corpus,
)
from .samples import (
    ROLES,
    corpus_stats,
    decision_samples,
    extract_decision_samples,
    extract_prediction_samples,
    prediction_samples,
)
from .text import SlotTable, delexicalize, segment_corpus, segment_user_turns, tokenize
from .vocab import (
    BOS,
    EOS,
    PAD,
    SEP,
    SPECIALS,
    UNK,
    EncodedSequence,
    TagCaps,
    Vocabulary,
    build_vocabulary,
    encode_history,
    encode_utterances,
    pad_batch,
)


def build_dataset(dialogues, slots=None, fraction: float = 0.5, seed: int = 0) -> list:
    """Delexicalise, segment a fraction of user turns and re-tag every utterance."""
    if slots:
        dialogues = [delexicalize(d, slots) for d in dialogues]
    return [d.validate() for d in segment_corpus(dialogues, fraction, seed)]
