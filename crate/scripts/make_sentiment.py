#!/usr/bin/env python3
"""Regenerate data/sentiment_toy.tsv: 200 balanced keyword-template reviews."""
import random

POS = ["great", "wonderful", "lovely", "excellent", "fun", "brilliant", "charming", "delightful", "superb", "moving"]
NEG = ["awful", "boring", "terrible", "dull", "bad", "weak", "painful", "clumsy", "tedious", "messy"]
THINGS = ["movie", "film", "plot", "ending", "cast", "story", "script", "soundtrack", "show", "acting"]
TEMPLATES = [
    "the {t} was {w}",
    "a {w} {t}",
    "what a {w} {t}",
    "i found the {t} {w}",
    "honestly the {t} felt {w}",
    "such a {w} {t} overall",
    "the {t} is {w} from start to finish",
    "my friends said the {t} was {w}",
]


def main():
    rng = random.Random(7)
    rows = set()
    for label, words in (("positive", POS), ("negative", NEG)):
        n = 0
        while n < 100:
            text = rng.choice(TEMPLATES).format(t=rng.choice(THINGS), w=rng.choice(words))
            if (text, label) not in rows:
                rows.add((text, label))
                n += 1
    rows = sorted(rows)
    rng.shuffle(rows)
    print("# text\tlabel")
    for text, label in rows:
        print(f"{text}\t{label}")


if __name__ == "__main__":
    main()
