"""Synthetic dynamic-vocabulary detection benchmark.

Each instance holds a few boxed objects; each object carries one positive
caption ("a dark brown dog") and N negative captions.  Difficulty subsets
(hard / medium / easy) build negatives by replacing 1 / 2 / 3 attribute
words; the trivial subset uses captions of unrelated objects; the four
attribute subsets replace one attribute of the named type.  Difficulty
subsets carry five negatives per object, attribute subsets two.

Region features are the encoder's global embedding of the positive
caption plus seeded directional noise, so the text side is the only thing
under test.  Dataset files store captions and boxes; features are always
recomputed from the captions and the recorded seed.
"""

from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass

import numpy as np

from .encoder import Encoder, default_mask_for, encode
from .seeding import substream
from .tokens import tokenize

DIFFICULTY_REPLACEMENTS = {"hard": 1, "medium": 2, "easy": 3}
ATTRIBUTE_TYPES = ("color", "material", "pattern", "transparency")
DIFFICULTY_SUBSETS = ("hard", "medium", "easy", "trivial")
ALL_SUBSETS = DIFFICULTY_SUBSETS + ATTRIBUTE_TYPES

N_NEGATIVES_DIFFICULTY = 5
N_NEGATIVES_ATTRIBUTE = 2

DEFAULT_SIGMA = 0.05
CANVAS_SIZE = 100.0
ATTRIBUTES_PER_OBJECT = 3


class UnknownSubsetError(ValueError):
    pass


@dataclass
class SyntheticObject:
    category: str
    attributes: tuple[tuple[str, str], ...]  # (type, word), types unique
    box: tuple[float, float, float, float]
    region_feature: np.ndarray | None = None

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if not (x2 > x1 and y2 > y1):
            raise ValueError(f"degenerate box {self.box}")
        types = [t for t, _ in self.attributes]
        if len(types) != len(set(types)):
            raise ValueError("attribute types must be unique per object")


@dataclass(frozen=True)
class ObjectVocabulary:
    pos: str
    neg: tuple[str, ...]


@dataclass
class EvalInstance:
    subset: str
    index: int
    objects: list[SyntheticObject]
    vocabs: list[ObjectVocabulary]


def load_word_pools() -> dict:
    ref = importlib.resources.files("attrilight.data").joinpath("word_pools.json")
    return json.loads(ref.read_text(encoding="utf-8"))


def make_caption(attributes, category: str) -> str:
    words = [word for _, word in attributes]
    return "a " + " ".join(words) + " " + category


def _sample_attributes(rng, pools, required_type=None):
    types = list(ATTRIBUTE_TYPES)
    if required_type is not None:
        others = [t for t in types if t != required_type]
        picks = {required_type}
        picks.update(
            others[i] for i in rng.choice(len(others), size=ATTRIBUTES_PER_OBJECT - 1,
                                          replace=False)
        )
    else:
        picks = {types[i] for i in rng.choice(len(types), size=ATTRIBUTES_PER_OBJECT,
                                              replace=False)}
    chosen = [t for t in ATTRIBUTE_TYPES if t in picks]
    return tuple(
        (t, pools["attributes"][t][int(rng.integers(len(pools["attributes"][t])))])
        for t in chosen
    )


def _replace_attributes(rng, pools, attributes, slots):
    replaced = list(attributes)
    for slot in slots:
        attr_type, word = replaced[slot]
        pool = [w for w in pools["attributes"][attr_type] if w != word]
        replaced[slot] = (attr_type, pool[int(rng.integers(len(pool)))])
    return tuple(replaced)


def _sample_box(rng, existing, max_tries=200):
    # keep ground-truth boxes mostly disjoint so per-object vocabularies
    # do not suppress each other in NMS
    for _ in range(max_tries):
        w = rng.uniform(15.0, 40.0)
        h = rng.uniform(15.0, 40.0)
        x1 = rng.uniform(0.0, CANVAS_SIZE - w)
        y1 = rng.uniform(0.0, CANVAS_SIZE - h)
        box = (float(x1), float(y1), float(x1 + w), float(y1 + h))
        if all(_iou(box, other) < 0.2 for other in existing):
            return box
    return box


def _iou(a, b):
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    if inter == 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _difficulty_negatives(rng, pools, attributes, n_replace, n_neg):
    negatives = []
    seen = set()
    n_slots = len(attributes)
    guard = 0
    while len(negatives) < n_neg and guard < 1000:
        guard += 1
        slots = sorted(rng.choice(n_slots, size=min(n_replace, n_slots), replace=False))
        candidate = _replace_attributes(rng, pools, attributes, slots)
        if candidate not in seen and candidate != tuple(attributes):
            seen.add(candidate)
            negatives.append(candidate)
    return negatives


def _trivial_negatives(rng, pools, category, n_neg):
    negatives = []
    categories = [c for c in pools["categories"] if c != category]
    for _ in range(n_neg):
        attrs = _sample_attributes(rng, pools)
        other = categories[int(rng.integers(len(categories)))]
        negatives.append(make_caption(attrs, other))
    return negatives


def _attribute_negatives(rng, pools, attributes, attr_type, n_neg):
    slot = next(i for i, (t, _) in enumerate(attributes) if t == attr_type)
    negatives = []
    seen = set()
    guard = 0
    while len(negatives) < n_neg and guard < 1000:
        guard += 1
        candidate = _replace_attributes(rng, pools, attributes, [slot])
        if candidate not in seen:
            seen.add(candidate)
            negatives.append(candidate)
    return negatives


def region_noise(rng, embedding: np.ndarray, sigma: float) -> np.ndarray:
    """A direction drawn uniformly at random, scaled to sigma * |embedding|."""
    direction = rng.standard_normal(embedding.shape[0])
    direction /= np.linalg.norm(direction)
    return direction * sigma * float(np.linalg.norm(embedding))


def compute_region_feature(enc: Encoder, caption: str, seed: int, sigma: float,
                           instance_index: int, object_index: int) -> np.ndarray:
    seq = tokenize(caption, enc.config.seq_len)
    clean = encode(seq, default_mask_for(seq, enc.config.flavor), enc)
    rng = substream(seed, "noise", instance_index, object_index)
    return clean + region_noise(rng, clean, sigma)


def generate_dataset(
    subset: str,
    n_instances: int,
    seed: int,
    enc: Encoder,
    sigma: float = DEFAULT_SIGMA,
    objects_per_instance: int = 2,
) -> list[EvalInstance]:
    """Generate one subset of the synthetic benchmark, deterministically."""
    subset = subset.lower()
    if subset not in ALL_SUBSETS:
        raise UnknownSubsetError(
            f"unknown subset {subset!r}; expected one of {', '.join(ALL_SUBSETS)}"
        )
    pools = load_word_pools()
    rng = substream(seed, "dataset")
    is_attribute_subset = subset in ATTRIBUTE_TYPES
    n_neg = N_NEGATIVES_ATTRIBUTE if is_attribute_subset else N_NEGATIVES_DIFFICULTY

    instances = []
    for i in range(n_instances):
        objects, vocabs, boxes = [], [], []
        for j in range(objects_per_instance):
            required = subset if is_attribute_subset else None
            attributes = _sample_attributes(rng, pools, required_type=required)
            category = pools["categories"][int(rng.integers(len(pools["categories"])))]
            box = _sample_box(rng, boxes)
            boxes.append(box)
            pos = make_caption(attributes, category)

            if subset in DIFFICULTY_REPLACEMENTS:
                neg_attrs = _difficulty_negatives(
                    rng, pools, attributes, DIFFICULTY_REPLACEMENTS[subset], n_neg
                )
                negs = tuple(make_caption(a, category) for a in neg_attrs)
            elif subset == "trivial":
                negs = tuple(_trivial_negatives(rng, pools, category, n_neg))
            else:
                neg_attrs = _attribute_negatives(rng, pools, attributes, subset, n_neg)
                negs = tuple(make_caption(a, category) for a in neg_attrs)

            region = compute_region_feature(enc, pos, seed, sigma, i, j)
            objects.append(
                SyntheticObject(category=category, attributes=attributes, box=box,
                                region_feature=region)
            )
            vocabs.append(ObjectVocabulary(pos=pos, neg=negs))
        instances.append(EvalInstance(subset=subset, index=i, objects=objects,
                                      vocabs=vocabs))
    return instances


# --------------------------------------------------------------------------
# Dataset file I/O (JSON Lines; captions and boxes only, features recomputed)
# --------------------------------------------------------------------------

def save_dataset(instances: list[EvalInstance], path, provenance: dict) -> None:
    """Write one instance per line, preceded by a provenance record."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"_provenance": provenance}, sort_keys=True) + "\n")
        for inst in instances:
            record = {
                "subset": inst.subset,
                "index": inst.index,
                "objects": [
                    {
                        "category": obj.category,
                        "attributes": [
                            {"type": t, "word": w} for t, w in obj.attributes
                        ],
                        "box": list(obj.box),
                        "captions": {"pos": vocab.pos, "neg": list(vocab.neg)},
                    }
                    for obj, vocab in zip(inst.objects, inst.vocabs)
                ],
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")


def load_dataset(path, enc: Encoder | None = None) -> tuple[list[EvalInstance], dict]:
    """Read a dataset file; with an encoder, recompute region features.

    The encoder must match the one recorded in the file's provenance,
    otherwise the recomputed features would not be the generated ones.
    """
    instances = []
    provenance: dict = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if "_provenance" in record:
                provenance = record["_provenance"]
                continue
            objects, vocabs = [], []
            for obj in record["objects"]:
                objects.append(
                    SyntheticObject(
                        category=obj["category"],
                        attributes=tuple((a["type"], a["word"]) for a in obj["attributes"]),
                        box=tuple(obj["box"]),
                    )
                )
                vocabs.append(
                    ObjectVocabulary(pos=obj["captions"]["pos"],
                                     neg=tuple(obj["captions"]["neg"]))
                )
            instances.append(
                EvalInstance(subset=record["subset"], index=record["index"],
                             objects=objects, vocabs=vocabs)
            )

    if enc is not None:
        if provenance.get("encoder") != enc.config.to_dict():
            raise ValueError(
                "dataset was generated with a different encoder config; "
                f"file has {provenance.get('encoder')}, got {enc.config.to_dict()}"
            )
        seed = int(provenance["seed"])
        sigma = float(provenance["sigma"])
        for inst in instances:
            for j, (obj, vocab) in enumerate(zip(inst.objects, inst.vocabs)):
                obj.region_feature = compute_region_feature(
                    enc, vocab.pos, seed, sigma, inst.index, j
                )
    return instances, provenance
