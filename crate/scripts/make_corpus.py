#!/usr/bin/env python3
"""Regenerate data/corpus.txt: simple English prose from a small seeded grammar."""
import random
import sys

SUBJECTS = ["the old farmer", "a young girl", "the baker", "my brother", "the teacher", "a tired dog",
            "the small cat", "our neighbor", "the captain", "a quiet boy", "the doctor", "her mother",
            "the fisherman", "a stranger", "the king", "the children", "his sister", "the miller"]
VERBS = ["walked to", "looked at", "found", "carried", "painted", "cleaned", "visited", "left",
         "watched", "opened", "closed", "fixed", "followed", "remembered", "sold", "bought"]
OBJECTS = ["the red door", "a wooden box", "the river", "the market", "an old map", "the green field",
           "a letter", "the small boat", "the garden", "a loaf of bread", "the village", "the tall tree",
           "a broken chair", "the long road", "the stone bridge", "a basket of apples"]
TIMES = ["in the morning", "at noon", "before dinner", "after the rain", "late at night", "on sunday",
         "in the spring", "during the storm", "at dawn", "every evening"]
FEELINGS = ["happy", "sad", "tired", "calm", "proud", "worried", "hungry", "cold", "glad", "quiet"]
PLACES = ["near the hill", "by the sea", "in the town", "behind the house", "under the bridge",
          "beside the well", "across the valley", "at the edge of the forest"]
WEATHER = ["The sun was warm.", "The wind was strong.", "It rained all day.", "The sky was grey.",
           "Snow fell on the roofs.", "The air smelled of grass.", "Clouds moved over the hills."]


def cap(s):
    return s[0].upper() + s[1:]


def sentence(rng):
    s, v, o = rng.choice(SUBJECTS), rng.choice(VERBS), rng.choice(OBJECTS)
    form = rng.randrange(7)
    if form == 0:
        return f"{cap(s)} {v} {o} {rng.choice(TIMES)}."
    if form == 1:
        return f"{cap(rng.choice(TIMES))}, {s} {v} {o}."
    if form == 2:
        return f"{cap(s)} was {rng.choice(FEELINGS)} because {rng.choice(SUBJECTS)} {v} {o}."
    if form == 3:
        return f"{cap(s)} lived {rng.choice(PLACES)} and {v} {o} {rng.choice(TIMES)}."
    if form == 4:
        return rng.choice(WEATHER)
    if form == 5:
        return f"When {s} {v} {o}, {rng.choice(SUBJECTS)} felt {rng.choice(FEELINGS)}."
    return f"{cap(s)} {v} {o} {rng.choice(PLACES)}."


def main():
    size = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
    rng = random.Random(20240611)
    out, total = [], 0
    while total < size:
        para = " ".join(sentence(rng) for _ in range(rng.randint(2, 5)))
        out.append(para)
        total += len(para) + 1
    sys.stdout.write("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
