#!/usr/bin/env python3
# Copyright 2026 The condepth Authors
# SPDX-License-Identifier: Apache-2.0
"""Generate the seeded synthetic English-like sample corpus.

Documents are separated by blank lines. Each document picks a topic with its
own noun and verb preferences and a few recurring names, so there is both
local (spelling, agreement) and document-level structure to learn.
"""

import argparse
import random

ONSETS = ["b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w",
          "br", "cl", "dr", "fl", "gr", "pl", "pr", "sh", "sl", "st", "th", "tr", "wh"]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ea", "ee", "oa", "ou", "y"]
CODAS = ["", "", "", "n", "r", "s", "t", "l", "nd", "ng", "rk", "st", "ck", "m"]

DETS = ["the", "a", "this", "that", "every", "one", "some"]
PREPS = ["in", "on", "near", "under", "beside", "across", "behind", "over", "with", "from"]
CONJ = ["and", "but", "so", "while", "because", "although", "until"]
ADVS = ["slowly", "quietly", "often", "rarely", "always", "soon", "again", "never", "still", "later"]
PRONOUNS = [("he", "his"), ("she", "her"), ("they", "their")]


def word(rng, syllables):
    return "".join(rng.choice(ONSETS) + rng.choice(VOWELS) + rng.choice(CODAS) for _ in range(syllables))


def lexicon(rng, n, lo, hi):
    out = set()
    while len(out) < n:
        out.add(word(rng, rng.randint(lo, hi)))
    return sorted(out)


def make_vocab(rng):
    nouns = lexicon(rng, 600, 1, 2)
    verbs = lexicon(rng, 300, 1, 2)
    adjs = lexicon(rng, 200, 1, 3)
    names = [w.capitalize() for w in lexicon(rng, 150, 2, 3)]
    return nouns, verbs, adjs, names


def plural(noun):
    if noun.endswith(("s", "sh", "ch")):
        return noun + "es"
    if noun.endswith("y") and len(noun) > 1 and noun[-2] not in "aeiou":
        return noun[:-1] + "ies"
    return noun + "s"


def past(verb):
    if verb.endswith("e"):
        return verb + "d"
    return verb + "ed"


def third(verb):
    if verb.endswith(("s", "sh", "ch")):
        return verb + "es"
    return verb + "s"


class Topic:
    def __init__(self, rng, nouns, verbs, adjs):
        self.nouns = rng.sample(nouns, 40)
        self.verbs = rng.sample(verbs, 20)
        self.adjs = rng.sample(adjs, 15)


def noun_phrase(rng, t):
    parts = [rng.choice(DETS)]
    if rng.random() < 0.4:
        parts.append(rng.choice(t.adjs))
    n = rng.choice(t.nouns)
    if parts[0] in ("some",):
        n = plural(n)
    parts.append(n)
    return " ".join(parts), parts[0] == "some"


def sentence(rng, t, cast, tense):
    subj_kind = rng.random()
    if subj_kind < 0.35:
        person = rng.choice(cast)
        subj, many = person[0], False
    elif subj_kind < 0.5:
        pron = rng.choice(PRONOUNS)
        subj, many = pron[0], pron[0] == "they"
    else:
        subj, many = noun_phrase(rng, t)
    v = rng.choice(t.verbs)
    if tense == "past":
        verb = past(v)
    else:
        verb = v if many or subj == "they" else third(v)
    words = [subj, verb]
    if rng.random() < 0.7:
        words.append(noun_phrase(rng, t)[0])
    if rng.random() < 0.5:
        words += [rng.choice(PREPS), noun_phrase(rng, t)[0]]
    if rng.random() < 0.3:
        words.append(rng.choice(ADVS))
    s = " ".join(words)
    if rng.random() < 0.25:
        s += ", " + rng.choice(CONJ) + " " + sentence(rng, t, cast, tense)[:-1]
    return s[0].upper() + s[1:] + "."


def document(rng, vocab, topics):
    nouns, verbs, adjs, names = vocab
    t = rng.choice(topics)
    cast = [(name,) for name in rng.sample(names, rng.randint(1, 3))]
    tense = rng.choice(["past", "present"])
    paragraphs = rng.randint(1, 3)
    lines = []
    for _ in range(paragraphs):
        n = rng.randint(3, 9)
        lines.append(" ".join(sentence(rng, t, cast, tense) for _ in range(n)))
    return "\n".join(lines)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/sample_corpus.txt")
    ap.add_argument("--bytes", type=int, default=1_200_000)
    ap.add_argument("--seed", type=int, default=20260101)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    vocab = make_vocab(rng)
    topics = [Topic(rng, vocab[0], vocab[1], vocab[2]) for _ in range(24)]
    docs, size = [], 0
    while size < args.bytes:
        d = document(rng, vocab, topics)
        docs.append(d)
        size += len(d) + 2
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("\n\n".join(docs) + "\n")


if __name__ == "__main__":
    main()
