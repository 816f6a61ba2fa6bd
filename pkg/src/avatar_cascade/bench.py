"""Benchmark manifests and Good/Same/Bad preference tallies.

Manifest line::

    {"id": "s0001",
     "image": {"path", "source", "category", "orientation", "resolution_class"},
     "audio": {"path", "language", "kind", "duration_s"},
     "prompt": {"text", "emotion", "intensity", "camera_ops", "actions"}}

Vote line: ``{"sample_id", "judge_id", "label", "dimension"?}`` where
``dimension`` defaults to ``overall``.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .audio import EMOTIONS, INTENSITIES
from .director import CAMERA_OPS
from .errors import ValidationError

SOURCES = ("real", "ai")
CATEGORIES = ("human_full", "human_half", "cartoon", "anime", "animal")
ORIENTATIONS = ("vertical", "horizontal", "square")
RESOLUTIONS = ("480p", "540p", "720p", "1080p")
LANGUAGES = ("zh", "en", "ko", "ja")
KINDS = ("speech", "song")
LABELS = ("G", "S", "B")
DIMENSIONS = ("overall", "lip_sync", "visual_quality", "control_response", "id_consistency")
DIMENSION_TITLES = {
    "overall": "Overall", "lip_sync": "Lip Sync", "visual_quality": "Visual Quality",
    "control_response": "Control Response", "id_consistency": "ID Consistency",
}
JUDGES_PER_SAMPLE = 3

# Row name -> sample filter (field -> allowed values)
TABLE_ROWS = (
    ("Overall", {}),
    ("Speech-En", {"kind": ("speech",), "language": ("en",)}),
    ("Speech-Ch", {"kind": ("speech",), "language": ("zh",)}),
    ("Sing-En/Ch", {"kind": ("song",), "language": ("en", "zh")}),
)

DATA_DIR = Path(__file__).parent / "data"


@dataclass(frozen=True)
class BenchSample:
    id: str
    image_path: str
    source: str
    category: str
    orientation: str
    resolution_class: str
    audio_path: str
    language: str
    kind: str
    duration_s: float
    prompt: str
    emotion: str
    intensity: str
    camera_ops: tuple = ()
    actions: tuple = ()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image": {"path": self.image_path, "source": self.source, "category": self.category,
                      "orientation": self.orientation, "resolution_class": self.resolution_class},
            "audio": {"path": self.audio_path, "language": self.language, "kind": self.kind,
                      "duration_s": self.duration_s},
            "prompt": {"text": self.prompt, "emotion": self.emotion, "intensity": self.intensity,
                       "camera_ops": list(self.camera_ops), "actions": list(self.actions)},
        }

    @property
    def is_human(self) -> bool:
        return self.category.startswith("human")

    def field_value(self, name: str):
        if name == "group":
            return "human" if self.is_human else "non_human"
        if not hasattr(self, name):
            raise ValidationError(f"unknown sample field {name!r}")
        return getattr(self, name)


_ENUMS = {
    ("image", "source"): SOURCES, ("image", "category"): CATEGORIES,
    ("image", "orientation"): ORIENTATIONS, ("image", "resolution_class"): RESOLUTIONS,
    ("audio", "language"): LANGUAGES, ("audio", "kind"): KINDS,
    ("prompt", "emotion"): EMOTIONS, ("prompt", "intensity"): INTENSITIES,
}


def sample_from_dict(d: dict) -> BenchSample:
    """Structural and enum checks only; duration bounds belong to the composition spec."""
    if not isinstance(d, dict):
        raise ValidationError("sample must be a JSON object")
    try:
        img, aud, pr = d["image"], d["audio"], d["prompt"]
        for (section, key), allowed in _ENUMS.items():
            value = d[section][key]
            if value not in allowed:
                raise ValidationError(f"{section}.{key}: {value!r} not in {list(allowed)}")
        cams = tuple(pr.get("camera_ops", ()))
        for c in cams:
            if c not in CAMERA_OPS:
                raise ValidationError(f"prompt.camera_ops: {c!r} not in {list(CAMERA_OPS)}")
        dur = aud["duration_s"]
        if isinstance(dur, bool) or not isinstance(dur, (int, float)) or not math.isfinite(dur):
            raise ValidationError("audio.duration_s must be a finite number")
        return BenchSample(
            id=str(d["id"]), image_path=str(img["path"]), source=img["source"], category=img["category"],
            orientation=img["orientation"], resolution_class=img["resolution_class"],
            audio_path=str(aud["path"]), language=aud["language"], kind=aud["kind"], duration_s=float(dur),
            prompt=str(pr["text"]), emotion=pr["emotion"], intensity=pr["intensity"],
            camera_ops=cams, actions=tuple(str(a) for a in pr.get("actions", ())),
        )
    except KeyError as exc:
        raise ValidationError(f"missing key {exc.args[0]!r}") from None
    except TypeError as exc:
        raise ValidationError(f"malformed sample: {exc}") from None


def _jsonl(lines: Iterable[str]):
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {lineno}: invalid JSON ({exc.msg})") from None


def parse_manifest(lines: Iterable[str]) -> list:
    out = []
    for lineno, obj in _jsonl(lines):
        try:
            out.append(sample_from_dict(obj))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    return out


def load_manifest(path) -> list:
    with open(path) as fh:
        return parse_manifest(fh)


def load_composition(path) -> dict:
    with open(path) as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"composition spec: invalid JSON ({exc.msg})") from None
    for key in ("total", "groups", "counts", "duration_range"):
        if key not in spec:
            raise ValidationError(f"composition spec: missing key {key!r}")
    return spec


@dataclass
class ManifestReport:
    violations: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations


def validate_manifest(manifest: Sequence[BenchSample], composition: Mapping) -> ManifestReport:
    """Count every rule in ``composition`` and report each mismatch as expected vs actual."""
    report = ManifestReport()
    v = report.violations
    if len(manifest) != composition["total"]:
        v.append(f"total: expected {composition['total']}, got {len(manifest)}")
    groups = Counter(s.field_value("group") for s in manifest)
    for name, expected in composition["groups"].items():
        if groups.get(name, 0) != expected:
            v.append(f"group {name}: expected {expected}, got {groups.get(name, 0)}")
    for fname, expected_counts in composition["counts"].items():
        counts = Counter(s.field_value(fname) for s in manifest)
        for value, expected in expected_counts.items():
            if counts.get(value, 0) != expected:
                v.append(f"{fname} {value}: expected {expected}, got {counts.get(value, 0)}")
    lo, hi = composition["duration_range"]
    for s in manifest:
        if not lo <= s.duration_s <= hi:
            v.append(f"sample {s.id}: duration_s {s.duration_s:g} outside [{lo:g}, {hi:g}]")
    dup = sorted(k for k, c in Counter(s.id for s in manifest).items() if c > 1)
    for k in dup:
        v.append(f"sample {k}: duplicate id")
    return report


# --------------------------------------------------------------------------
# GSB


@dataclass(frozen=True)
class GsbRecord:
    sample_id: str
    judge_id: str
    label: str
    dimension: str = "overall"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValidationError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.dimension not in DIMENSIONS:
            raise ValidationError(f"dimension must be one of {DIMENSIONS}, got {self.dimension!r}")


def parse_votes(lines: Iterable[str]) -> list:
    out = []
    for lineno, obj in _jsonl(lines):
        try:
            if not isinstance(obj, dict):
                raise ValidationError("vote must be a JSON object")
            out.append(GsbRecord(str(obj["sample_id"]), str(obj["judge_id"]), obj["label"],
                                 obj.get("dimension", "overall")))
        except KeyError as exc:
            raise ValidationError(f"line {lineno}: missing key {exc.args[0]!r}") from None
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    return out


def load_votes(path) -> list:
    with open(path) as fh:
        return parse_votes(fh)


def majority_vote(labels: Sequence[str]) -> str:
    """Label with at least two of three votes; the G/S/B split resolves to S."""
    if len(labels) != JUDGES_PER_SAMPLE:
        raise ValidationError(f"majority vote needs exactly {JUDGES_PER_SAMPLE} labels, got {len(labels)}")
    for lab in labels:
        if lab not in LABELS:
            raise ValidationError(f"unknown label {lab!r}")
    label, count = Counter(labels).most_common(1)[0]
    return label if count >= 2 else "S"


def gsb_metric(g: int, s: int, b: int) -> float:
    return math.inf if b + s == 0 else (g + s) / (b + s)


def format_metric(m: float) -> str:
    return "inf" if math.isinf(m) else f"{m:.2f}"


@dataclass(frozen=True)
class GsbResult:
    g: int
    s: int
    b: int

    @property
    def n(self) -> int:
        return self.g + self.s + self.b

    @property
    def metric(self) -> float:
        return gsb_metric(self.g, self.s, self.b)

    def formatted(self) -> str:
        return format_metric(self.metric)

    def to_dict(self) -> dict:
        m = self.metric
        return {"G": self.g, "S": self.s, "B": self.b, "metric": None if math.isinf(m) else m,
                "formatted": self.formatted()}


def sample_matches(sample: BenchSample, sample_filter: Optional[Mapping]) -> bool:
    if not sample_filter:
        return True
    for key, allowed in sample_filter.items():
        if isinstance(allowed, str):
            allowed = (allowed,)
        if str(sample.field_value(key)) not in allowed:
            return False
    return True


def tally(records: Sequence[GsbRecord], samples: Optional[Sequence[BenchSample]] = None,
          sample_filter: Optional[Mapping] = None, dimension: str = "overall") -> GsbResult:
    """Majority vote per sample then count G/S/B for one dimension stream."""
    by_sample = defaultdict(list)
    for r in records:
        if r.dimension == dimension:
            by_sample[r.sample_id].append(r)
    if sample_filter:
        if samples is None:
            raise ValidationError("a sample filter needs the benchmark manifest")
        index = {s.id: s for s in samples}
        unknown = sorted(k for k in by_sample if k not in index)
        if unknown:
            raise ValidationError(f"votes for samples missing from the manifest: {', '.join(unknown)}")
        keep = {k for k in by_sample if sample_matches(index[k], sample_filter)}
    else:
        keep = set(by_sample)
    bad = []
    for k in sorted(keep):
        judges = [r.judge_id for r in by_sample[k]]
        if len(judges) != JUDGES_PER_SAMPLE or len(set(judges)) != len(judges):
            bad.append(f"{k} ({len(judges)} judgments)")
    if bad:
        raise ValidationError(f"expected {JUDGES_PER_SAMPLE} distinct judges per sample: {', '.join(bad)}")
    counts = Counter(majority_vote([r.label for r in by_sample[k]]) for k in keep)
    return GsbResult(counts["G"], counts["S"], counts["B"])


def parse_filter(text: str) -> dict:
    """``language=zh,kind=speech`` or ``language=en|zh``."""
    out = {}
    if not text:
        return out
    for part in text.split(","):
        if "=" not in part:
            raise ValidationError(f"filter term {part!r} must look like key=value")
        key, value = part.split("=", 1)
        key = key.strip()
        if key not in BenchSample.__dataclass_fields__ and key != "group":
            raise ValidationError(f"unknown filter key {key!r}")
        out[key] = tuple(v.strip() for v in value.split("|"))
    return out


def score_table(records: Sequence[GsbRecord], samples: Optional[Sequence[BenchSample]] = None,
                sample_filter: Optional[Mapping] = None) -> list:
    """Rows of ``(category, {dimension: GsbResult})``; category rows need ``samples``."""
    present = [d for d in DIMENSIONS if any(r.dimension == d for r in records)]
    if sample_filter:
        rows = (("Filtered", dict(sample_filter)),)
    elif samples is None:
        rows = TABLE_ROWS[:1]
    else:
        rows = TABLE_ROWS
    out = []
    for name, filt in rows:
        out.append((name, {d: tally(records, samples, filt, d) for d in present}))
    return out


def render_table(rows: Sequence) -> str:
    dims = list(rows[0][1]) if rows else []
    header = ["Category"] + [DIMENSION_TITLES[d] for d in dims]
    body = [[name] + [res[d].formatted() for d in dims] for name, res in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    fmt = lambda r: " | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    return "\n".join([fmt(header), "-+-".join("-" * w for w in widths)] + [fmt(r) for r in body]) + "\n"


# --------------------------------------------------------------------------
# Shipped example data


EXAMPLE_COMPOSITION = {
    "total": 375,
    "groups": {"human": 340, "non_human": 35},
    "counts": {"language": {"zh": 150, "en": 150, "ko": 35, "ja": 40}},
    "duration_range": [8, 120],
}

MUTANTS = ("total", "group", "language", "duration", "duplicate_id")


def example_manifest(seed: int = 0) -> list:
    """Synthetic manifest matching ``EXAMPLE_COMPOSITION``."""
    rng = np.random.default_rng(seed)
    languages = ["zh"] * 150 + ["en"] * 150 + ["ko"] * 35 + ["ja"] * 40
    categories = ["human_full"] * 170 + ["human_half"] * 170 + ["cartoon"] * 12 + ["anime"] * 12 + ["animal"] * 11
    rng.shuffle(languages)
    rng.shuffle(categories)
    actions = ("turning", "raising_hands", "head_shaking", "nodding", "talking")
    out = []
    for i in range(375):
        sid = f"s{i + 1:04d}"
        cat = categories[i]
        cam = tuple(sorted(set(rng.choice(CAMERA_OPS, size=int(rng.integers(0, 3))).tolist())))
        act = tuple(sorted(set(rng.choice(actions, size=int(rng.integers(1, 3))).tolist())))
        out.append(BenchSample(
            id=sid, image_path=f"images/{sid}.ppm",
            source="real" if cat.startswith("human") and rng.random() < 0.7 else "ai",
            category=cat, orientation=str(rng.choice(ORIENTATIONS)),
            resolution_class=str(rng.choice(RESOLUTIONS)),
            audio_path=f"audio/{sid}.wav", language=languages[i],
            kind="song" if rng.random() < 0.25 else "speech",
            duration_s=float(round(rng.uniform(8, 120), 1)),
            prompt=f"{' and '.join(act)} with {' '.join(cam) or 'a static camera'}",
            emotion=str(rng.choice(EMOTIONS)), intensity=str(rng.choice(INTENSITIES)),
            camera_ops=cam, actions=act,
        ))
    return out


def mutate(manifest: Sequence[BenchSample], rule: str) -> list:
    """Break exactly one composition rule."""
    from dataclasses import replace
    m = list(manifest)
    if rule == "total":
        return m[:-1]
    if rule == "group":
        i = next(k for k, s in enumerate(m) if s.is_human)
        m[i] = replace(m[i], category="cartoon")
    elif rule == "language":
        i = next(k for k, s in enumerate(m) if s.language == "zh")
        m[i] = replace(m[i], language="en")
    elif rule == "duration":
        m[0] = replace(m[0], duration_s=150.0)
    elif rule == "duplicate_id":
        m[1] = replace(m[1], id=m[0].id)
    else:
        raise ValidationError(f"unknown mutant rule {rule!r}")
    return m


def write_manifest(samples: Sequence[BenchSample], path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")


def write_example_data(directory=DATA_DIR) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    base = example_manifest()
    write_manifest(base, directory / "bench_manifest.jsonl")
    with open(directory / "bench_composition.json", "w") as fh:
        json.dump(EXAMPLE_COMPOSITION, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for rule in MUTANTS:
        write_manifest(mutate(base, rule), directory / f"bench_mutant_{rule}.jsonl")
