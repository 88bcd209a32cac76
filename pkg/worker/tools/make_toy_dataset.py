#!/usr/bin/env python3
"""Generate the bundled toy sentiment corpus and its embedding table.

Deterministic end to end: fixed seeds, sorted outputs.  Three files land in
``src/eval_worker/data/``:

- ``train.tsv`` / ``eval.tsv`` — ``label<TAB>sentence`` lines, disjoint sets.
- ``embeddings.tsv`` — a static word vector per vocabulary word.

Design goals, in order:

1. The label must not be readable from word presence alone.  Half the
   sentences use a negation-contrast shape, "{X} but not {Y}", in all four
   variants (either polarity first, "not" attached to either slot), labeled
   by the polarity of the adjective that is *not* negated:

       charming but not dull   -> positive      dull but not charming -> negative
       not charming but dull   -> negative      not dull but charming -> positive

   All four variants share the same bag of words, so an order-blind model
   scores 50% on this half (~75% overall).  The rule is carried entirely
   by which adjective "not" sits next to; random-length adverb runs before
   and inside the shape move that pattern across absolute positions.  Note
   what this does *not* do: every architecture in the search space embeds
   absolute positions, and a max-pooled stack can reassemble adjacency from
   position-tagged unigrams, so trained students clear this task — the
   corpus guarantees a floor over bag-of-words shortcuts, not a spread of
   clean accuracy across architectures.
2. Synonyms must exist for the substitution attack: content words come in
   groups whose vectors are drawn around a shared direction, calibrated so
   within-group cosine stays above the 0.7 admissibility threshold and
   cross-group cosine stays below it (asserted, not hoped).
3. The attack must have somewhere to land: one mild-positive and one
   mild-negative adjective group are drawn around *nearby* directions so
   their cross pairs sit just above the admissibility threshold.  Swapping
   "decent" for "mediocre" is an admissible substitution that genuinely
   moves the decision, so robustness stays strictly below clean accuracy.
"""

import math
import pathlib
import random

OUT_DIR = pathlib.Path(__file__).resolve().parents[1] / "src" / "eval_worker" / "data"

TRAIN_SIZE = 4000
EVAL_SIZE = 1000
EMBED_DIM = 64
INTRA_COS_MIN = 0.72  # tightest admissible synonym pair, margin above 0.7
CROSS_COS_MAX = 0.62  # loosest non-synonym pair, margin below 0.7
BRIDGE_COS_MIN = 0.715  # mild-positive / mild-negative cross pairs stay
BRIDGE_COS_MAX = 0.805  # admissible but clearly weaker than true synonyms
MAX_PREFIX = 6  # adverb prefixes shift every slot by 0..6 positions
MAX_INFIX = 2  # adverbs can also land inside the contrast shape

POSITIVE = [
    ["wonderful", "marvelous", "fantastic", "superb"],
    ["charming", "delightful", "pleasant", "lovely"],
    ["brilliant", "clever", "inspired", "masterful"],
    ["moving", "touching", "stirring", "poignant"],
    ["funny", "hilarious", "amusing", "witty"],
    ["decent", "passable", "watchable", "serviceable"],
]
NEGATIVE = [
    ["awful", "terrible", "dreadful", "horrid"],
    ["boring", "dull", "tedious", "monotonous"],
    ["messy", "sloppy", "clumsy", "muddled"],
    ["shallow", "hollow", "vapid", "lifeless"],
    ["annoying", "irritating", "grating", "tiresome"],
    ["mediocre", "middling", "lackluster", "unremarkable"],
]
# the mild groups above form the bridge: their cross pairs are admissible
BRIDGE_GROUPS = (POSITIVE[5], NEGATIVE[5])

NOUNS = [
    ["movie", "film", "picture", "feature"],
    ["story", "plot", "tale", "premise"],
    ["acting", "performances", "cast"],
    ["script", "writing", "dialogue"],
    ["direction", "staging", "craft"],
    ["soundtrack", "score", "music"],
]
POS_VERBS = [["delights", "entertains", "captivates", "impresses"]]
NEG_VERBS = [["disappoints", "bores", "annoys", "underwhelms"]]
INTENSIFIERS = [["very", "truly", "really", "utterly"]]
HEDGES = [["somewhat", "rather", "slightly", "fairly"]]
ADVERBS = [
    "honestly", "frankly", "basically", "overall", "somehow",
    "clearly", "largely", "mostly", "arguably", "ultimately",
]

# Function words are singleton groups: they get vectors, but no word sits
# within the similarity threshold of them, so the attack never touches them.
FILLERS = ["the", "a", "this", "and", "is", "everyone", "not", "but"] + ADVERBS

# (label, template) pairs; slots draw one word from the named pool.  These
# shapes are solvable from the bag of words alone.
PLAIN_TEMPLATES = [
    (1, "the {noun} is {int} {pos}"),
    (1, "a {pos} and {pos2} {noun}"),
    (1, "this {noun} {posv} everyone"),
    (1, "a {hedge} {pos} {noun}"),
    (0, "the {noun} is {int} {neg}"),
    (0, "a {neg} and {neg2} {noun}"),
    (0, "this {noun} {negv} everyone"),
    (0, "a {hedge} {neg} {noun}"),
]

# The negation-contrast cores (see module docstring); {keep} is the adjective
# that decides the label, {drop} the one "not" discounts, and {inf} is a
# variable run of adverbs.  "not" stays adjacent to {drop} — that adjacency
# carries the rule — while everything else drifts, so the pattern occurs at
# many absolute offsets.  Half the sentences get a noun lead-in on top.
CONTRAST_CORES = [
    "{keep}{inf} but not {drop}",
    "not {drop}{inf} but {keep}",
]
CONTRAST_LEAD = "the {noun} is "


def _flat(groups):
    return [word for group in groups for word in group]


def _fill_plain(template: str, rng: random.Random) -> str:
    pools = {
        "pos": _flat(POSITIVE),
        "pos2": _flat(POSITIVE),
        "neg": _flat(NEGATIVE),
        "neg2": _flat(NEGATIVE),
        "noun": _flat(NOUNS),
        "posv": _flat(POS_VERBS),
        "negv": _flat(NEG_VERBS),
        "int": _flat(INTENSIFIERS),
        "hedge": _flat(HEDGES),
    }
    values = {}
    for key, pool in pools.items():
        if "{" + key + "}" in template:
            values[key] = rng.choice(pool)
    # paired slots must differ so "x and x film" never appears
    if "pos2" in values and values.get("pos") == values["pos2"]:
        values["pos2"] = rng.choice([w for w in pools["pos2"] if w != values["pos"]])
    if "neg2" in values and values.get("neg") == values["neg2"]:
        values["neg2"] = rng.choice([w for w in pools["neg2"] if w != values["neg"]])
    return template.format(**values)


def _fill_contrast(adverbs: list[str], rng: random.Random) -> tuple[int, str]:
    """One negation-contrast sentence; the non-negated adjective decides."""
    pos = rng.choice(_flat(POSITIVE))
    neg = rng.choice(_flat(NEGATIVE))
    keep_positive = rng.random() < 0.5
    keep, drop = (pos, neg) if keep_positive else (neg, pos)
    infix = adverbs[: rng.randint(0, MAX_INFIX)]
    body = rng.choice(CONTRAST_CORES).format(
        keep=keep, drop=drop, inf="".join(" " + w for w in infix)
    )
    if rng.random() < 0.5:
        body = CONTRAST_LEAD.format(noun=rng.choice(_flat(NOUNS))) + body
    return int(keep_positive), body


def generate_sentences() -> list[tuple[int, str]]:
    rng = random.Random(20240601)
    seen = set()
    rows = []
    while len(rows) < TRAIN_SIZE + EVAL_SIZE:
        # one distinct-adverb pool per sentence, split between prefix and infix
        adverbs = rng.sample(ADVERBS, MAX_PREFIX + MAX_INFIX)
        # plain and negation-contrast shapes are equally frequent
        if rng.random() < 0.5:
            label, template = PLAIN_TEMPLATES[rng.randrange(len(PLAIN_TEMPLATES))]
            body = _fill_plain(template, rng)
        else:
            label, body = _fill_contrast(adverbs[MAX_PREFIX:], rng)
        prefix = adverbs[: rng.randint(0, MAX_PREFIX)]
        sentence = " ".join(prefix + [body])
        if sentence in seen:
            continue
        seen.add(sentence)
        rows.append((label, sentence))
    rng.shuffle(rows)
    return rows


# ---------------------------------------------------------------------------
# embedding table


def _unit(vec):
    norm = math.sqrt(sum(x * x for x in vec))
    return [x / norm for x in vec]


def _cos(a, b):
    return sum(x * y for x, y in zip(a, b))


def build_embeddings() -> dict[str, list[float]]:
    """One vector per word; synonym groups share a direction.

    The two bridge groups share *nearby* directions so their cross pairs
    land inside [BRIDGE_COS_MIN, BRIDGE_COS_MAX].  Regenerates with the next
    seed until all margins hold, so the thresholds in the attack are
    guaranteed by construction, not by luck.
    """
    groups = (
        POSITIVE + NEGATIVE + NOUNS + POS_VERBS + NEG_VERBS + INTENSIFIERS + HEDGES
        + [[w] for w in FILLERS]
    )
    bridge_ids = {groups.index(BRIDGE_GROUPS[0]), groups.index(BRIDGE_GROUPS[1])}
    for attempt in range(1000):
        rng = random.Random(7_700_000 + attempt)
        vectors: dict[str, list[float]] = {}
        group_of: dict[str, int] = {}
        bases: dict[int, list[float]] = {}
        for gid, group in enumerate(groups):
            if group is BRIDGE_GROUPS[1]:
                # anchor the mild-negative direction near the mild-positive one
                anchor = bases[groups.index(BRIDGE_GROUPS[0])]
                tilt = _unit([rng.gauss(0.0, 1.0) for _ in range(EMBED_DIM)])
                base = _unit([p + 0.67 * t for p, t in zip(anchor, tilt)])
            else:
                base = _unit([rng.gauss(0.0, 1.0) for _ in range(EMBED_DIM)])
            bases[gid] = base
            for word in group:
                noise = _unit([rng.gauss(0.0, 1.0) for _ in range(EMBED_DIM)])
                vectors[word] = _unit([b + 0.30 * x for b, x in zip(base, noise)])
                group_of[word] = gid

        words = sorted(vectors)
        ok = True
        for i, a in enumerate(words):
            for b in words[i + 1 :]:
                cos = _cos(vectors[a], vectors[b])
                if group_of[a] == group_of[b]:
                    ok = ok and cos >= INTRA_COS_MIN
                elif group_of[a] in bridge_ids and group_of[b] in bridge_ids:
                    ok = ok and BRIDGE_COS_MIN <= cos <= BRIDGE_COS_MAX
                else:
                    ok = ok and cos <= CROSS_COS_MAX
            if not ok:
                break
        if ok:
            print(f"embedding margins satisfied on attempt {attempt}")
            return vectors
    raise RuntimeError("could not satisfy embedding margins in 1000 attempts")


def main() -> int:
    rows = generate_sentences()
    train, evaluation = rows[:TRAIN_SIZE], rows[TRAIN_SIZE:]

    vocab_in_data = {w for _, sentence in rows for w in sentence.split()}
    vectors = build_embeddings()
    missing = vocab_in_data - set(vectors)
    assert not missing, f"words without vectors: {sorted(missing)}"

    longest = max(len(s.split()) for _, s in rows)
    assert longest <= 16, f"sentence too long for the fixed position budget: {longest}"

    OUT_DIR.mkdir(parents=True, exist_ok=True)
    (OUT_DIR / "train.tsv").write_text(
        "".join(f"{label}\t{sentence}\n" for label, sentence in train), encoding="utf-8"
    )
    (OUT_DIR / "eval.tsv").write_text(
        "".join(f"{label}\t{sentence}\n" for label, sentence in evaluation), encoding="utf-8"
    )
    (OUT_DIR / "embeddings.tsv").write_text(
        "".join(
            f"{word}\t{' '.join(f'{x:.6f}' for x in vec)}\n"
            for word, vec in sorted(vectors.items())
        ),
        encoding="utf-8",
    )
    pos_rate = sum(label for label, _ in train) / len(train)
    print(f"wrote {len(train)} train / {len(evaluation)} eval sentences (max length {longest})")
    print(f"vocabulary: {len(vectors)} words, positive rate {pos_rate:.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
