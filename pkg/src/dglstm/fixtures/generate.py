"""Regenerate the bundled toy corpus.

The text comes from a small hand-written sentence grammar sampled with a fixed
seed, so the files are reproducible and free of third-party copyright::

    python -m dglstm.fixtures.generate
"""

from __future__ import annotations

import random
from pathlib import Path

HERE = Path(__file__).parent

NOUNS = [
    "miller", "farmer", "widow", "sailor", "child", "shepherd", "baker", "smith", "king", "queen",
    "fox", "heron", "crow", "horse", "dog", "cat", "wolf", "goose", "river", "mill", "forest",
    "village", "road", "bridge", "garden", "field", "tower", "boat", "lantern", "letter", "key",
    "coat", "bell", "apple", "stone", "candle", "window", "door", "hill", "harbour",
]
ADJECTIVES = [
    "old", "young", "grey", "small", "tall", "quiet", "bright", "dark", "cold", "warm", "tired",
    "clever", "poor", "rich", "little", "green", "heavy", "broken", "golden", "patient",
]
VERBS_T = [
    "saw", "found", "carried", "followed", "watched", "lost", "mended", "opened", "sold", "kept",
    "painted", "heard", "called", "fed", "counted", "buried", "greeted", "remembered",
]
VERBS_I = ["slept", "laughed", "waited", "sang", "wept", "walked", "listened", "rested", "wandered"]
PLACES = ["by the river", "in the forest", "near the mill", "on the bridge", "at the harbour",
          "under the tower", "behind the garden", "across the field", "along the road", "on the hill"]
TIMES = ["in the morning", "at night", "before dawn", "after supper", "in winter", "one autumn day",
         "when the bell rang", "at noon"]
NAMES = ["anna", "tom", "mara", "peter", "ivo", "lena", "hugo", "rosa"]


def noun_phrase(rng: random.Random) -> str:
    if rng.random() < 0.15:
        return rng.choice(NAMES)
    det = rng.choice(["the", "the", "a", "her", "his", "their"])
    if rng.random() < 0.55:
        return f"{det} {rng.choice(ADJECTIVES)} {rng.choice(NOUNS)}"
    return f"{det} {rng.choice(NOUNS)}"


def clause(rng: random.Random) -> str:
    subj = noun_phrase(rng)
    if rng.random() < 0.65:
        out = f"{subj} {rng.choice(VERBS_T)} {noun_phrase(rng)}"
    else:
        out = f"{subj} {rng.choice(VERBS_I)}"
    if rng.random() < 0.4:
        out += " " + rng.choice(PLACES)
    return out


def sentence(rng: random.Random) -> str:
    s = clause(rng)
    r = rng.random()
    if r < 0.25:
        s = f"{rng.choice(TIMES)} , {s}"
    elif r < 0.5:
        s += f" {rng.choice(['and', 'but', 'so', 'while'])} {clause(rng)}"
    return s + rng.choice([" .", " .", " .", " !", " ?"])


def generate(n_chars: int, seed: int) -> list[str]:
    rng = random.Random(seed)
    lines, size = [], 0
    while size < n_chars:
        line = sentence(rng)
        lines.append(line)
        size += len(line) + 1
    return lines


def main() -> None:
    for split, n_chars, seed in (("train", 90_000, 1), ("valid", 6_000, 2), ("test", 6_000, 3)):
        (HERE / f"tiny.{split}.txt").write_text("\n".join(generate(n_chars, seed)) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
