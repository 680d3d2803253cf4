#!/usr/bin/env python3
"""Regenerates the bundled knowledge snapshot and toy corpora under data/.

The output is deterministic (fixed seeds); rerunning it reproduces the
checked-in files byte for byte.

  data/kb/            triples.tsv, gazetteer.tsv, weights.tsv,
                      synonyms.tsv, symbol_map.tsv
  data/toy/           train.jsonl / test.jsonl   planted-symbol corpus
  data/knowledge_only/train.jsonl / test.jsonl   labels depend only on KB facts
"""

import json
import os
import random
import sys

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")

TASKS = ["harmfulness", "hatefulness", "misogyny", "offensiveness", "sarcasm"]

# Named symbols: (entity_id, label, symbol_tag or "", hateful, facts)
# facts: list of (source, relation, tail, snippet)
NAMED = [
    ("pepe_the_frog", "Pepe the Frog", "alt-right symbol", True, [
        ("hatebase", "associated_with", "alt-right groups",
         "Pepe the Frog was co-opted by alt-right groups as a hate symbol."),
        ("wikidata", "instance_of", "internet meme", "Pepe the Frog is a cartoon frog internet meme."),
        ("conceptnet", "related_to", "white supremacist propaganda",
         "Pepe variants circulate in white supremacist propaganda."),
    ]),
    ("sonnenrad", "Sonnenrad", "neo-nazi symbol", True, [
        ("hatebase", "associated_with", "neo-nazi groups", "The Sonnenrad is used by neo-nazi groups."),
        ("wikidata", "instance_of", "hate symbol", "The Sonnenrad is catalogued as a hate symbol."),
    ]),
    ("happy_merchant", "Happy Merchant", "antisemitic caricature", True, [
        ("hatebase", "associated_with", "antisemitic hate groups",
         "The Happy Merchant is an antisemitic caricature spread by hate groups."),
        ("conceptnet", "related_to", "racist propaganda", "The caricature is a staple of racist propaganda."),
    ]),
    ("honkler", "Honkler", "alt-right symbol", True, [
        ("hatebase", "associated_with", "alt-right groups", "Honkler memes are used by alt-right groups."),
        ("wikidata", "derived_from", "pepe the frog", "Honkler is derived from Pepe the Frog."),
    ]),
    ("triple_parentheses", "Triple parentheses", "antisemitic echo symbol", True, [
        ("hatebase", "targets", "jewish people", "Triple parentheses are used to target jewish people online."),
        ("conceptnet", "related_to", "racist propaganda", "The echo symbol is used in racist propaganda."),
    ]),
    ("kermit_the_frog", "Kermit the Frog", "", False, [
        ("wikidata", "instance_of", "muppet character", "Kermit the Frog is a muppet character."),
        ("conceptnet", "related_to", "children television", "Kermit is associated with children television."),
    ]),
    ("doge", "Doge", "", False, [
        ("wikidata", "instance_of", "internet meme", "Doge is a shiba inu internet meme."),
        ("conceptnet", "related_to", "friendly humor", "Doge memes are known for friendly humor."),
    ]),
    ("grumpy_cat", "Grumpy Cat", "", False, [
        ("wikidata", "instance_of", "internet celebrity cat", "Grumpy Cat was an internet celebrity cat."),
        ("conceptnet", "related_to", "friendly humor", "Grumpy Cat memes are lighthearted."),
    ]),
    ("sunflower", "Sunflower", "", False, [
        ("conceptnet", "is_a", "flower", "A sunflower is a flower."),
        ("wikidata", "symbol_of", "peace and solidarity", "The sunflower is a symbol of peace and solidarity."),
    ]),
    ("peace_sign", "Peace sign", "", False, [
        ("wikidata", "symbol_of", "peace movement", "The peace sign is a symbol of the peace movement."),
        ("conceptnet", "related_to", "friendly community", "The peace sign is used by friendly communities."),
    ]),
]

# Extra gazetteer surfaces: (surface, entity_id)
EXTRA_SURFACES = [
    ("pepe the frog", "pepe_the_frog"),
    ("happy merchant", "happy_merchant"),
    ("kermit", "kermit_the_frog"),
    ("grumpy cat", "grumpy_cat"),
    ("peace sign", "peace_sign"),
]

BENIGN_ICONS = {
    "pepe_the_frog": "green_frog_icon",
    "sonnenrad": "sun_icon",
    "happy_merchant": "smiling_man_icon",
    "honkler": "clown_icon",
    "triple_parentheses": "brackets_icon",
}

SYNONYMS = [
    ("welcome", "greetings"), ("neighborhood", "area"), ("happy", "glad"), ("friends", "pals"),
    ("big", "large"), ("little", "small"), ("day", "afternoon"), ("great", "excellent"),
    ("look", "see"), ("home", "house"), ("new", "fresh"), ("people", "folks"),
    ("funny", "amusing"), ("good", "fine"), ("everyone", "everybody"), ("morning", "dawn"),
]

CAPTIONS = [
    "welcome neighbors",
    "home at last",
    "look at this",
    "great day",
    "group chat",
    "good morning friends",
    "happy people",
    "big mood",
    "here we are",
    "almost weekend",
    "little things",
    "people get it",
    "funny picture",
    "coffee time",
    "new neighbors",
    "so tired",
]

NEUTRAL_TAGS = [
    "street", "house", "table", "smile", "sky", "dog", "car", "tree", "crowd", "phone",
    "coffee", "sunset", "window", "couch", "beach", "city", "chair", "book",
]

# Synthetic coded symbols whose meaning is only recoverable from the KB.
SYLLABLES = ["vor", "tal", "mek", "sun", "rin", "dax", "lom", "quir", "bex", "zan", "pol", "kiv",
             "yor", "fen", "gar", "hul", "jat", "nim", "oss", "wex"]

HATEFUL_FACTS = [
    ("hatebase", "associated_with", "violent extremist hate groups",
     "{label} is a coded emblem of violent extremist hate groups."),
    ("wikidata", "instance_of", "coded hate symbol", "{label} is catalogued as a coded hate symbol."),
    ("conceptnet", "related_to", "racist supremacist propaganda",
     "{label} appears in racist supremacist propaganda."),
]

BENIGN_FACTS = [
    ("wikidata", "instance_of", "cheerful cartoon mascot", "{label} is a cheerful cartoon mascot."),
    ("conceptnet", "related_to", "friendly family entertainment",
     "{label} is associated with friendly family entertainment."),
]


def synthetic_names(rng, count):
    names = set()
    while len(names) < count:
        names.add(rng.choice(SYLLABLES) + rng.choice(SYLLABLES) + rng.choice(SYLLABLES))
    return sorted(names)


def write(path, text):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def jsonl(records):
    return "".join(json.dumps(r, ensure_ascii=False, separators=(", ", ": ")) + "\n" for r in records)


def harm_word(task):
    return {"harmfulness": "harm", "hatefulness": "exclusion", "misogyny": "misogyny",
            "offensiveness": "offense", "sarcasm": "mockery"}[task]


def rationale(label, entity_label, group, task):
    if label == 1:
        return f"Detected {entity_label.lower()} symbol linked to {group}; the meme amplifies {harm_word(task)}."
    return "No culturally harmful symbol or phrase detected; knowledge context does not indicate abuse."


def main():
    rng = random.Random(20240611)
    synth = synthetic_names(rng, 80)
    rng.shuffle(synth)
    hateful_synth, benign_synth = sorted(synth[:40]), sorted(synth[40:])

    triples = ["# source\thead_id\thead_label\trelation\ttail\tsnippet"]
    gazetteer = ["# surface\tentity_id\tsymbol_tag"]
    entities = {}  # id -> (label, hateful, group)
    for eid, label, tag, hateful, facts in NAMED:
        for src, rel, tail, snip in facts:
            triples.append("\t".join([src, eid, label, rel, tail, snip]))
        gazetteer.append("\t".join([eid, eid, tag]) if tag else "\t".join([eid, eid]))
        entities[eid] = (label, hateful, facts[0][2])
    for surface, eid in EXTRA_SURFACES:
        tag = next(t for e, _, t, _, _ in NAMED if e == eid)
        gazetteer.append("\t".join([surface, eid, tag]) if tag else "\t".join([surface, eid]))
    for name in hateful_synth + benign_synth:
        hateful = name in hateful_synth
        eid = "sym_" + name
        label = name.capitalize()
        for src, rel, tail, snip in (HATEFUL_FACTS if hateful else BENIGN_FACTS):
            triples.append("\t".join([src, eid, label, rel, tail, snip.format(label=label)]))
        tag = "coded hate symbol" if hateful else ""
        gazetteer.append("\t".join([name, eid, tag]) if tag else "\t".join([name, eid]))
        entities[eid] = (label, hateful, (HATEFUL_FACTS if hateful else BENIGN_FACTS)[0][2])

    kb = os.path.join(ROOT, "kb")
    write(os.path.join(kb, "triples.tsv"), "\n".join(triples) + "\n")
    write(os.path.join(kb, "gazetteer.tsv"), "\n".join(gazetteer) + "\n")
    write(os.path.join(kb, "weights.tsv"),
          "# source\tweight\nconceptnet\t0.3\nwikidata\t0.4\nhatebase\t0.3\n")
    write(os.path.join(kb, "synonyms.tsv"),
          "# token\tsynonym\n" + "".join(f"{a}\t{b}\n" for a, b in SYNONYMS))
    write(os.path.join(kb, "symbol_map.tsv"),
          "# symbol_tag\tbenign_icon\n" + "".join(f"{a}\t{b}\n" for a, b in sorted(BENIGN_ICONS.items())))

    hateful_named = [e for e, _, _, h, _ in NAMED if h]
    benign_named = [e for e, _, _, h, _ in NAMED if not h]
    text_surface = {eid: s for s, eid in EXTRA_SURFACES}

    def planted(seed, count, prefix):
        r = random.Random(seed)
        out = []
        for i in range(count):
            label = i % 2
            task = TASKS[(i // 2) % len(TASKS)]
            caption = r.choice(CAPTIONS).split()
            tags = r.sample(NEUTRAL_TAGS, r.randint(0, 1))
            if label == 1:
                eid = r.choice(hateful_named)
            else:
                eid = r.choice(benign_named)
            if eid is not None:
                if eid in text_surface and r.random() < 0.3:
                    caption = caption + text_surface[eid].split()
                else:
                    tags.insert(r.randint(0, len(tags)), eid)
            rec = {"id": f"{prefix}{i:03d}", "text_tokens": caption, "image_tags": tags,
                   "label": label, "task": task}
            ent = entities.get(eid, ("", False, ""))
            rec["gold_rationale"] = rationale(label, ent[0], ent[2], task)
            out.append(rec)
        r.shuffle(out)
        return out

    def knowledge_only(seed, count, prefix, hateful_pool, benign_pool):
        r = random.Random(seed)
        out = []
        for i in range(count):
            label = i % 2
            task = TASKS[(i // 2) % len(TASKS)]
            name = r.choice(hateful_pool if label == 1 else benign_pool)
            tags = r.sample(NEUTRAL_TAGS, r.randint(0, 1))
            tags.insert(r.randint(0, len(tags)), name)
            rec = {"id": f"{prefix}{i:03d}", "text_tokens": r.choice(CAPTIONS).split(),
                   "image_tags": tags, "label": label, "task": task}
            ent = entities["sym_" + name]
            rec["gold_rationale"] = rationale(label, ent[0], ent[2], task)
            out.append(rec)
        r.shuffle(out)
        return out

    write(os.path.join(ROOT, "toy", "train.jsonl"), jsonl(planted(1, 200, "toy-train-")))
    write(os.path.join(ROOT, "toy", "test.jsonl"), jsonl(planted(2, 100, "toy-test-")))
    # Train and test use disjoint synthetic symbols: only the shared KB fact
    # vocabulary carries the label.
    write(os.path.join(ROOT, "knowledge_only", "train.jsonl"),
          jsonl(knowledge_only(3, 200, "ko-train-", hateful_synth[:28], benign_synth[:28])))
    write(os.path.join(ROOT, "knowledge_only", "test.jsonl"),
          jsonl(knowledge_only(4, 100, "ko-test-", hateful_synth[28:], benign_synth[28:])))
    return 0


if __name__ == "__main__":
    sys.exit(main())
