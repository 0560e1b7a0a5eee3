"""Synthetic task-oriented dialogues with learnable wait/answer structure.

Each user turn picks an intent family of three ordered sentences and utters the
first k of them (k uniform in {1, 2, 3}), one sentence per sub-turn. In the
default mode non-final sub-turns end with a continuation cue (and / also /
plus) and the final sub-turn with a request cue (please / thanks); the cue is
fixed per sentence so the next utterance is near-deterministic given the
history. The agent answers each user turn with the family's reply. In hard
mode cues are dropped and k follows a per-dialogue verbosity habit instead.
"""
from __future__ import annotations

import numpy as np

from .corpus.data import Dialogue, Turn
from .corpus.text import segment_corpus

CONTINUATION_CUES = ("and", "also", "plus")
REQUEST_CUES = ("please", "thanks")

GREETINGS = (
    "hello , how can i help you today ?",
    "hi there , what can i do for you ?",
)

# (user sentences in order, agent reply)
FAMILIES = (
    (("i need a place to eat in the [restaurant_area]",
      "it should serve [restaurant_food] food",
      "a table for [restaurant_people] people at [restaurant_time]"),
     "i have booked [restaurant_name] for you , the reference number is [restaurant_reference] ."),
    (("what is the address for [restaurant_name] in [restaurant_area]",
      "i would also like the phone number",
      "tell me the postcode as well"),
     "the address is [restaurant_address] , can i help you with anything else ?"),
    (("i am looking for a guesthouse in the [hotel_area]",
      "it must have free parking and wifi",
      "book it for [hotel_stay] nights from [hotel_day]"),
     "[hotel_name] is a nice guesthouse , your booking reference is [hotel_reference] ."),
    (("i want to find a cheap hotel to stay",
      "the star rating should be [hotel_stars]",
      "it needs to be close to the city centre"),
     "how about [hotel_name] ? it is cheap and has [hotel_stars] stars ."),
    (("i need a train to [train_destination] on [train_day]",
      "leaving from [train_departure] after [train_leave]",
      "get me tickets for [train_people] people"),
     "train [train_id] leaves at [train_leave] , the total fee is [train_price] pounds ."),
    (("when does the next train leave for [train_destination]",
      "i am travelling from [train_departure]",
      "how long is the journey"),
     "the next one departs at [train_leave] and arrives by [train_arrive] ."),
    (("can you book a taxi for me",
      "pick me up from [taxi_departure]",
      "i want to arrive at [taxi_destination] by [taxi_arrive]"),
     "a [taxi_car] is booked , the contact number is [taxi_phone] ."),
    (("are there any museums worth visiting",
      "something in the [attraction_area] of town",
      "what is the entrance fee"),
     "[attraction_name] is a great museum and entrance is [attraction_fee] ."),
    (("i would like to see a show tonight",
      "do you know a theatre near the [attraction_area]",
      "send me its address"),
     "you could try [attraction_name] , it is located at [attraction_address] ."),
    (("my friend was hurt and needs a hospital",
      "we need the [hospital_department] department",
      "what number should i call"),
     "the hospital is at [hospital_address] , phone [hospital_phone] ."),
    (("i lost my wallet near the station",
      "where is the closest police station",
      "i also need to report it"),
     "the police station is at [police_address] , their number is [police_phone] ."),
    (("where can i get a good coffee",
      "somewhere quiet to read for a while",
      "is it open on [restaurant_day]"),
     "[restaurant_name] is a quiet cafe , it opens at [restaurant_time] ."),
)


def _cue(kind: tuple, family: int, sentence: int) -> str:
    return kind[(3 * family + sentence) % len(kind)]


def _user_sentence(family: int, j: int, final: bool, hard: bool) -> str:
    text = FAMILIES[family][0][j]
    if hard:
        return text + " ."
    cue = _cue(REQUEST_CUES if final else CONTINUATION_CUES, family, j)
    return f"{text} {cue} ."


def synth_dialogue(rng: np.random.Generator, dialogue_id: str, hard: bool = False) -> Dialogue:
    turns = [Turn("agent", [GREETINGS[int(rng.integers(len(GREETINGS)))]])]
    habit = int(rng.integers(1, 4))
    n_user = int(rng.integers(2, 5))
    families = rng.permutation(len(FAMILIES))[:n_user]
    for f in families:
        f = int(f)
        if hard:
            k = habit if rng.random() < 0.8 else int(rng.integers(1, 4))
        else:
            k = int(rng.integers(1, 4))
        sentences = [_user_sentence(f, j, j == k - 1, hard) for j in range(k)]
        turns.append(Turn("user", sentences, segmented=True if k > 1 else None))
        turns.append(Turn("agent", [FAMILIES[f][1]]))
    return Dialogue(dialogue_id, [], turns)


def synth_corpus(n_dialogues: int, seed: int = 7, hard: bool = False) -> list:
    """``n_dialogues`` constructed dialogues with an 80/10/10 train/valid/test split.

    All randomness comes from one generator seeded with ``seed``.
    """
    if n_dialogues < 1:
        raise ValueError("need at least one dialogue")
    rng = np.random.default_rng(seed)
    dialogues = [synth_dialogue(rng, f"synth-{seed}-{i:05d}", hard) for i in range(n_dialogues)]
    # user turns come pre-split, so segmentation only rebuilds tagged utterances
    dialogues = segment_corpus(dialogues, 0.0, seed)
    n_train = int(round(0.8 * n_dialogues))
    n_valid = int(round(0.1 * n_dialogues))
    for i, d in enumerate(rng.permutation(n_dialogues)):
        dialogues[d].split = "train" if i < n_train else "valid" if i < n_train + n_valid else "test"
    return [d.validate() for d in dialogues]
