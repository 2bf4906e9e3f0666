"""Dynamic-vocabulary detection evaluation.

For every object the detector must pick the positive caption out of a
small per-object vocabulary.  Proposals are the ground-truth boxes plus
seeded jittered copies; each (proposal, caption) pair becomes one scored
prediction.  Class-agnostic NMS keeps one prediction per location
regardless of caption, which closes the loophole where a co-located
positive and negative would count as precision 0.5 / recall 1.0.
Average precision uses 101-point interpolation; an instance's AP treats
predictions carrying any negative caption as false positives.
"""

from __future__ import annotations

import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .benchmark import ATTRIBUTE_TYPES, DIFFICULTY_SUBSETS, EvalInstance
from .compose import WeightTriplet, compose
from .encoder import (
    Encoder,
    attribute_mask_for,
    default_mask_for,
    encode,
    encode_pair,
)
from .extraction import AttributeList
from .masks import RestrictAxis
from .seeding import substream
from .tokens import AttributePositions, Flavor, match_positions, tokenize

SUBSET_ORDER = DIFFICULTY_SUBSETS + ATTRIBUTE_TYPES


class EvalMode(enum.Enum):
    BASELINE = "baseline"
    HA_FGOVD = "ha-fgovd"
    MASK_SPECIALS = "mask-specials"
    MASK_RANDOM = "mask-random"


@dataclass(frozen=True)
class PredictionBox:
    box: tuple[float, float, float, float]
    score: float
    caption_index: int  # 0 = positive caption, 1..N = negatives

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError("score must be finite")


@dataclass
class EvalReport:
    mode: str
    per_subset: dict[str, float] = field(default_factory=dict)

    @property
    def average(self) -> float:
        if not self.per_subset:
            raise ValueError("empty report")
        return float(np.mean(list(self.per_subset.values())))


class UndefinedMetricError(ValueError):
    """No ground truths at all; precision/recall are undefined."""


def score(region_feature: np.ndarray, text_embedding: np.ndarray) -> float:
    """Cosine similarity mapped to [0, 1] via (1 + cos) / 2."""
    if region_feature.shape != text_embedding.shape:
        raise ValueError("embedding dimensions disagree")
    norm_r = np.linalg.norm(region_feature)
    norm_t = np.linalg.norm(text_embedding)
    if norm_r == 0.0 or norm_t == 0.0:
        raise ValueError("zero-norm input to score")
    cos = float(region_feature @ text_embedding / (norm_r * norm_t))
    return (1.0 + cos) / 2.0


def iou(a, b) -> float:
    """Intersection over union of two (x1, y1, x2, y2) boxes."""
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    if inter == 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _ranked(preds: list[PredictionBox]) -> list[PredictionBox]:
    # descending score; ties broken by lower caption index, then input order
    order = sorted(range(len(preds)),
                   key=lambda i: (-preds[i].score, preds[i].caption_index, i))
    return [preds[i] for i in order]


def class_agnostic_nms(preds: list[PredictionBox], iou_thr: float) -> list[PredictionBox]:
    """Greedy NMS ignoring caption labels: one prediction per location."""
    if not 0.0 < iou_thr < 1.0:
        raise ValueError("iou_thr must be in (0, 1)")
    kept: list[PredictionBox] = []
    for pred in _ranked(preds):
        if all(iou(pred.box, k.box) < iou_thr for k in kept):
            kept.append(pred)
    return kept


def _match_tp(preds: list[PredictionBox], gts, iou_thr: float) -> list[bool]:
    """Greedy TP assignment over score-ranked predictions.

    A prediction is a true positive when it carries the positive caption
    and overlaps a not-yet-matched ground truth at IoU >= iou_thr; the
    highest-IoU unmatched ground truth is consumed.
    """
    matched = [False] * len(gts)
    flags = []
    for pred in preds:
        best, best_iou = -1, 0.0
        if pred.caption_index == 0:
            for gi, gt in enumerate(gts):
                if matched[gi]:
                    continue
                overlap = iou(pred.box, gt)
                if overlap >= iou_thr and overlap > best_iou:
                    best, best_iou = gi, overlap
        if best >= 0:
            matched[best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def precision_recall(preds: list[PredictionBox], gts, iou_thr: float = 0.5):
    """Precision and recall over the full prediction list of one instance."""
    if not gts:
        raise UndefinedMetricError("no ground truths")
    ranked = _ranked(preds)
    flags = _match_tp(ranked, gts, iou_thr)
    tp = sum(flags)
    fp = len(flags) - tp
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / len(gts)
    return precision, recall


def average_precision(preds: list[PredictionBox], gts, iou_thr: float = 0.5,
                      n_points: int = 101) -> float:
    """Interpolated AP of one instance (101-point by default)."""
    if not gts:
        raise UndefinedMetricError("no ground truths")
    if not preds:
        return 0.0
    ranked = _ranked(preds)
    flags = np.array(_match_tp(ranked, gts, iou_thr), dtype=np.float64)
    tp_cum = np.cumsum(flags)
    precisions = tp_cum / np.arange(1, len(flags) + 1)
    recalls = tp_cum / len(gts)
    ap = 0.0
    for r in np.linspace(0.0, 1.0, n_points):
        mask = recalls >= r
        ap += precisions[mask].max() if mask.any() else 0.0
    return ap / n_points


def compute_map(preds_per_instance, gts_per_instance, iou_thr: float = 0.5,
                n_points: int = 101) -> float:
    """Mean over instances of per-instance interpolated AP."""
    if not 0.0 < iou_thr < 1.0:
        raise ValueError("iou_thr must be in (0, 1)")
    if sum(len(g) for g in gts_per_instance) == 0:
        raise UndefinedMetricError("no ground truths in any instance")
    aps = [
        average_precision(preds, gts, iou_thr, n_points)
        for preds, gts in zip(preds_per_instance, gts_per_instance)
    ]
    return float(np.mean(aps))


# --------------------------------------------------------------------------
# End-to-end protocol
# --------------------------------------------------------------------------

@dataclass
class EvalSettings:
    iou_thr: float = 0.5
    nms_iou: float = 0.5
    n_proposals: int = 3
    jitter: float = 0.08
    seed: int = 0
    restrict_axis: RestrictAxis = RestrictAxis.QUERIES
    n_workers: int = 1


def _jittered_proposals(box, rng, n_proposals: int, jitter: float):
    proposals = [tuple(float(c) for c in box)]
    x1, y1, x2, y2 = box
    w, h = x2 - x1, y2 - y1
    for _ in range(n_proposals - 1):
        dx1, dy1, dx2, dy2 = rng.uniform(-jitter, jitter, size=4) * (w, h, w, h)
        proposals.append((float(x1 + dx1), float(y1 + dy1),
                          float(max(x2 + dx2, x1 + dx1 + 1e-6)),
                          float(max(y2 + dy2, y1 + dy1 + 1e-6))))
    return proposals


def _random_text_subset(rng, text_positions):
    chosen = [p for p in text_positions if rng.random() < 0.5]
    if not chosen:
        chosen = [text_positions[int(rng.integers(len(text_positions)))]]
    return chosen


def _phi_for_mode(seq, attrs: AttributeList, flavor: Flavor, mode: EvalMode,
                  rng=None) -> AttributePositions:
    phi = match_positions(seq, list(attrs.words), flavor)
    if mode is EvalMode.MASK_SPECIALS:
        specials = {0, seq.end_index}
        kept = tuple(p for p in phi.positions if p not in specials)
        phi = AttributePositions(positions=kept, source_words=phi.source_words)
    elif mode is EvalMode.MASK_RANDOM:
        text_positions = seq.text_positions()
        chosen = set(_random_text_subset(rng, text_positions)) if text_positions else set()
        extras = [p for p in phi.positions if seq.kinds[p].value != "text"]
        phi = AttributePositions(positions=tuple(sorted(chosen.union(extras))),
                                 source_words=())
    return phi


def caption_embedding(
    caption: str,
    enc: Encoder,
    extractor,
    triplet: WeightTriplet,
    mode: EvalMode,
    settings: EvalSettings,
    rng=None,
) -> np.ndarray:
    """The text embedding one caption contributes under the given mode."""
    seq = tokenize(caption, enc.config.seq_len)
    flavor = enc.config.flavor
    if mode is EvalMode.BASELINE:
        return encode(seq, default_mask_for(seq, flavor), enc)

    attrs = extractor(caption)
    phi = _phi_for_mode(seq, attrs, flavor, mode, rng=rng)
    if mode is EvalMode.MASK_SPECIALS:
        # removing START/END can fully mask leading rows of the causal
        # attribute mask; those rows degrade to uniform attention
        u_global = encode(seq, default_mask_for(seq, flavor), enc)
        has_text = any(seq.kinds[p].value == "text" for p in phi.positions)
        if not has_text:
            return u_global
        attr_mask = attribute_mask_for(seq, phi, flavor,
                                       restrict_axis=settings.restrict_axis,
                                       check_rows=False)
        u_attri = encode(seq, attr_mask, enc)
        return compose(u_global, u_attri, triplet, skip=False)

    pair = encode_pair(seq, phi, enc, restrict_axis=settings.restrict_axis)
    return compose(pair.u_global, pair.u_attri, triplet, skip=pair.skip)


def evaluate(
    instances: list[EvalInstance],
    enc: Encoder,
    extractor,
    triplet: WeightTriplet,
    mode: EvalMode,
    settings: EvalSettings | None = None,
) -> EvalReport:
    """Score every caption of every object, NMS, and report mAP per subset."""
    if not instances:
        raise ValueError("empty dataset")
    settings = settings or EvalSettings()

    # Text embeddings are computed serially (with a cache for the
    # deterministic modes) so reports do not depend on worker count.
    cache: dict[str, np.ndarray] = {}

    def embedding_for(caption, inst_index, obj_index, caption_index):
        if mode is EvalMode.MASK_RANDOM:
            rng = substream(settings.seed, "mask-random",
                            inst_index, obj_index, caption_index)
            return caption_embedding(caption, enc, extractor, triplet, mode,
                                     settings, rng=rng)
        if caption not in cache:
            cache[caption] = caption_embedding(caption, enc, extractor, triplet,
                                               mode, settings)
        return cache[caption]

    per_instance_embeddings = []
    for inst in instances:
        obj_embeddings = []
        for j, vocab in enumerate(inst.vocabs):
            captions = [vocab.pos, *vocab.neg]
            obj_embeddings.append(
                [embedding_for(c, inst.index, j, ci) for ci, c in enumerate(captions)]
            )
        per_instance_embeddings.append(obj_embeddings)

    def run_instance(args):
        inst, obj_embeddings = args
        preds: list[PredictionBox] = []
        for j, (obj, vocab) in enumerate(zip(inst.objects, inst.vocabs)):
            if obj.region_feature is None:
                raise ValueError("instance objects lack region features; "
                                 "load the dataset with an encoder")
            rng = substream(settings.seed, "proposals", inst.index, j)
            proposals = _jittered_proposals(obj.box, rng, settings.n_proposals,
                                            settings.jitter)
            for proposal in proposals:
                for ci, emb in enumerate(obj_embeddings[j]):
                    preds.append(PredictionBox(
                        box=proposal,
                        score=score(obj.region_feature, emb),
                        caption_index=ci,
                    ))
        kept = class_agnostic_nms(preds, settings.nms_iou)
        gts = [obj.box for obj in inst.objects]
        return average_precision(kept, gts, settings.iou_thr)

    work = list(zip(instances, per_instance_embeddings))
    if settings.n_workers > 1:
        with ThreadPoolExecutor(max_workers=settings.n_workers) as pool:
            aps = list(pool.map(run_instance, work))
    else:
        aps = [run_instance(item) for item in work]

    by_subset: dict[str, list[float]] = {}
    for inst, ap in zip(instances, aps):
        by_subset.setdefault(inst.subset, []).append(ap)
    report = EvalReport(mode=mode.value)
    for subset in SUBSET_ORDER:
        if subset in by_subset:
            report.per_subset[subset] = float(np.mean(by_subset[subset]))
    return report


# --------------------------------------------------------------------------
# Report files
# --------------------------------------------------------------------------

def write_report_csv(reports: list[EvalReport], path, provenance: dict) -> None:
    """CSV with subset,mode,mAP rows, provenance in a leading comment."""
    lines = [f"# provenance: {json.dumps(provenance, sort_keys=True)}",
             "subset,mode,mAP"]
    for report in reports:
        for subset, value in report.per_subset.items():
            lines.append(f"{subset},{report.mode},{value:.6f}")
        lines.append(f"average,{report.mode},{report.average:.6f}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_report_csv(path) -> list[EvalReport]:
    reports: dict[str, EvalReport] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("subset,"):
                continue
            subset, mode, value = line.split(",")
            if subset == "average":
                continue
            report = reports.setdefault(mode, EvalReport(mode=mode))
            report.per_subset[subset] = float(value)
    return list(reports.values())


def format_markdown_table(reports: list[EvalReport]) -> str:
    """Markdown table with one column per subset plus the subset average."""
    subsets = [s for s in SUBSET_ORDER
               if any(s in r.per_subset for r in reports)]
    header = "| Mode | " + " | ".join(s.capitalize() for s in subsets) + " | Average |"
    rule = "|" + " --- |" * (len(subsets) + 2)
    rows = []
    for report in reports:
        cells = [f"{report.per_subset[s]:.3f}" if s in report.per_subset else "-"
                 for s in subsets]
        rows.append(f"| {report.mode} | " + " | ".join(cells)
                    + f" | {report.average:.3f} |")
    return "\n".join([header, rule, *rows]) + "\n"
