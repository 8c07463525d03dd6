#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Builds word-completion multiple-choice tasks from a plain-text corpus.

Each item holds a character context ending at a word boundary and a set of
candidate continuations: the word that actually follows plus distractor words
drawn from the same text. Output is JSON lines with fields
``context`` / ``choices`` / ``gold``.
"""

import argparse
import json
import random
import re


def build_items(text, n_items, n_choices, context_chars, rng):
    words = sorted({w for w in re.findall(r"\b[a-z]{4,}\b", text)})
    spans = [m for m in re.finditer(r" ([a-z]{4,})\b", text) if m.start() >= context_chars]
    rng.shuffle(spans)
    items = []
    for m in spans:
        if len(items) == n_items:
            break
        gold_word = m.group(1)
        context = text[m.start() - context_chars:m.start() + 1]
        distractors = set()
        while len(distractors) < n_choices - 1:
            w = rng.choice(words)
            if w != gold_word:
                distractors.add(w)
        choices = sorted(distractors)
        gold = rng.randrange(n_choices)
        choices.insert(gold, gold_word)
        items.append({"context": context, "choices": choices, "gold": gold})
    return items


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("corpus")
    ap.add_argument("out")
    ap.add_argument("--items", type=int, default=300)
    ap.add_argument("--choices", type=int, default=4)
    ap.add_argument("--context-chars", type=int, default=48)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with open(args.corpus, encoding="utf-8") as f:
        text = f.read()
    rng = random.Random(args.seed)
    items = build_items(text, args.items, args.choices, args.context_chars, rng)
    with open(args.out, "w", encoding="utf-8") as f:
        for it in items:
            f.write(json.dumps(it) + "\n")


if __name__ == "__main__":
    main()
