"""Deterministic fixture corpus shared by the test suite.

Builds ten samples (eight fact-QA across four categories, two snake
identifications), query images and result thumbnails, a fixture provider
manifest keyed by image hash, a scripted backend covering every condition
plus judge and probe rows, an entity-name table, and a search-count CSV.

The reply texts are crafted so judge verdicts, recall hits, and snake
verdicts are all hand-computable; the expectation tables below are the
oracle the pipeline tests compare against.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from PIL import Image, ImageDraw

CONDITIONS = ("Vanilla", "RIR", "RIRMaskImages", "RIRMaskText", "OracleEntity")

# id -> (category, question, answers, entity_id, entity_name, binomial)
SAMPLES = {
    "s01": ("facility", "Which country is this facility in?",
            ["Czech Republic"], "Q101", "Bouzov Castle", None),
    "s02": ("facility", "Which city is this landmark in?",
            ["Paris"], "Q102", "Eiffel Tower", None),
    "s03": ("building", "In which year was this building completed?",
            ["1931"], "Q103", "Empire State Building", None),
    "s04": ("building", "Who designed this building?",
            ["Gaudi", "Antoni Gaudi"], "Q104", "Sagrada Familia", None),
    "s05": ("food", "Which country does this dish come from?",
            ["Italy"], "Q105", "Margherita pizza", None),
    "s06": ("food", "What is the main ingredient of this dish?",
            ["rice"], "Q106", "Sushi", None),
    "s07": ("animal", "Where does this bird live?",
            ["Madagascar"], "Q107", "Red fody", None),
    "s08": ("animal", "What does this animal mainly eat?",
            ["carnivore"], "Q108", "Fossa", None),
    "s09": ("snake", "What species of snake is shown?",
            ["Crotalus viridis"], "Q109", "Prairie rattlesnake", "Crotalus viridis"),
    "s10": ("snake", "What species of snake is shown?",
            ["Virginia valeriae"], "Q110", "Smooth earth snake", "Virginia valeriae"),
}

_VANILLA_REPLIES = {
    "s01": "It looks like a castle somewhere in Europe.",
    "s02": "A big tower, maybe in London.",
    "s03": "It was completed in 1931.",
    "s04": "A church in Spain.",
    "s05": "This pizza comes from Italy.",
    "s06": "Sushi is made with rice and fish.",
    "s07": "This bird lives in Madagascar.",
    "s08": "It eats fruit.",
    "s09": "This is some rattlesnake.",
    "s10": "Probably a garter snake.",
}

_RIR_REPLIES = {
    "s01": "This is Bouzov Castle in the Czech Republic.",
    "s02": "The Eiffel Tower in Paris.",
    "s03": "Empire State Building, completed in 1931.",
    "s04": "Designed by Antoni Gaudi.",
    "s05": "A flatbread dish.",
    "s06": "A Japanese dish of vinegared rice.",
    "s07": "This bird is endemic to the island nation east of Africa.",
    "s08": "It mainly eats lemurs.",
    "s09": "Likely Crotalus atrox, a rattlesnake.",
    "s10": "This is a Smooth Earth Snake.",
}

_ORACLE_REPLIES = {
    "s01": "Bouzov Castle is in the Czech Republic.",
    "s02": "The Eiffel Tower stands in Paris.",
    "s03": "The Empire State Building was completed in 1931.",
    "s04": "It was designed by Antoni Gaudi.",
    "s05": "The Margherita pizza comes from Italy.",
    "s06": "Sushi is mostly vinegared rice.",
    "s07": "The red fody lives in Madagascar.",
    "s08": "The fossa is a carnivore.",
    "s09": "Crotalus viridis, the prairie rattlesnake.",
    "s10": "Virginia valeriae is a small secretive snake.",
}

_PROBE_REPLIES = {
    "s01": "Bouzov Castle",
    "s02": "The Eiffel Tower in Paris",
    "s03": "maybe a tall skyscraper",
    "s04": "Sagrada Familia",
    "s05": "some pizza",
    "s06": "Sushi",
    "s07": "Red fody",
    "s08": "a cat-like mammal",
    "s09": "Prairie rattlesnake",
    "s10": "a snake",
}

# judge verdicts forced by the scripted judge; (sample, condition) -> bool.
# RIR-variant verdicts are shared across the three retrieval conditions.
_JUDGE_VANILLA = {
    "s01": False, "s02": False, "s03": True, "s04": False,
    "s05": True, "s06": True, "s07": True, "s08": False,
}
_JUDGE_RIR = {
    "s01": True, "s02": True, "s03": True, "s04": True,
    "s05": False, "s06": True, "s07": True, "s08": False,
}
_JUDGE_ORACLE = {sid: True for sid in _JUDGE_VANILLA}

#: Expected judge_correct per (sample_id, condition); None for snake samples.
JUDGE_EXPECT: dict[tuple[str, str], bool | None] = {}
#: Expected recall_hit per (sample_id, condition).
RECALL_EXPECT: dict[tuple[str, str], bool] = {}
#: Expected snake verdict tuples for the two snake samples.
SNAKE_EXPECT: dict[tuple[str, str], tuple[bool, bool, bool, bool]] = {
    ("s09", "Vanilla"): (False, False, False, False),
    ("s09", "RIR"): (False, True, False, True),
    ("s09", "RIRMaskImages"): (False, True, False, True),
    ("s09", "RIRMaskText"): (False, True, False, True),
    ("s09", "OracleEntity"): (True, True, True, True),
    ("s10", "Vanilla"): (False, False, False, False),
    ("s10", "RIR"): (False, False, False, False),
    ("s10", "RIRMaskImages"): (False, False, False, False),
    ("s10", "RIRMaskText"): (False, False, False, False),
    ("s10", "OracleEntity"): (True, True, True, True),
}

_RECALL_VANILLA = {
    "s01": False, "s02": False, "s03": True, "s04": False,
    "s05": True, "s06": True, "s07": True, "s08": False,
    "s09": False, "s10": False,
}
_RECALL_RIR = {
    "s01": True, "s02": True, "s03": True, "s04": True,
    "s05": False, "s06": True, "s07": False, "s08": False,
    "s09": False, "s10": False,
}
_RECALL_ORACLE = {
    "s01": True, "s02": True, "s03": True, "s04": True,
    "s05": True, "s06": True, "s07": True, "s08": True,
    "s09": True, "s10": True,
}

for sid in SAMPLES:
    is_snake = SAMPLES[sid][5] is not None
    for cond in CONDITIONS:
        if is_snake:
            JUDGE_EXPECT[(sid, cond)] = None
        elif cond == "Vanilla":
            JUDGE_EXPECT[(sid, cond)] = _JUDGE_VANILLA[sid]
        elif cond == "OracleEntity":
            JUDGE_EXPECT[(sid, cond)] = _JUDGE_ORACLE[sid]
        else:
            JUDGE_EXPECT[(sid, cond)] = _JUDGE_RIR[sid]
        if cond == "Vanilla":
            RECALL_EXPECT[(sid, cond)] = _RECALL_VANILLA[sid]
        elif cond == "OracleEntity":
            RECALL_EXPECT[(sid, cond)] = _RECALL_ORACLE[sid]
        else:
            RECALL_EXPECT[(sid, cond)] = _RECALL_RIR[sid]

#: Hand-computed per-category judge accuracy for the Vanilla and RIR runs.
EXPECTED_JUDGE_ACC = {
    "Vanilla": {"facility": 0.0, "building": 50.0, "food": 100.0, "animal": 50.0},
    "RIR": {"facility": 100.0, "building": 100.0, "food": 50.0, "animal": 50.0},
}
EXPECTED_JUDGE_AVG = {"Vanilla": 50.0, "RIR": 75.0}
EXPECTED_RECALL_AVG = {"Vanilla": 50.0, "RIR": 62.5}
EXPECTED_PROBE_HITS = 6  # of 10

SEARCH_COUNTS = {
    "Q101": 9_200, "Q102": 81_000_000, "Q103": 52_000_000, "Q104": 30_500,
    "Q105": 640_000, "Q106": 210_000_000, "Q107": 18_400, "Q108": 97_000,
    "Q109": 450_000, "Q110": 62_000,
}


@dataclass(frozen=True)
class Corpus:
    root: Path
    dataset_manifest: Path
    provider_manifest: Path
    backend_fixture: Path
    entity_fixture: Path
    counts_csv: Path
    config_path: Path
    images: dict[str, Path]
    unmapped_image: Path
    broken_image: Path

    def entity_names(self) -> dict[str, str]:
        return {SAMPLES[s][3]: SAMPLES[s][4] for s in SAMPLES}


def _paint(path: Path, size: tuple[int, int], color: tuple[int, int, int]) -> None:
    img = Image.new("RGB", size, color)
    draw = ImageDraw.Draw(img)
    w, h = size
    draw.ellipse((w // 4, h // 4, 3 * w // 4, 3 * h // 4),
                 fill=tuple(255 - c for c in color))
    img.save(path, format="PNG")


def _reply_rows() -> list[dict]:
    rows = []

    def add(sid: str, condition: str, reply: str) -> None:
        rows.append({"sample_id": sid, "condition": condition, "reply": reply})

    for sid in SAMPLES:
        add(sid, "Vanilla", _VANILLA_REPLIES[sid])
        for cond in ("RIR", "RIRMaskImages", "RIRMaskText"):
            add(sid, cond, _RIR_REPLIES[sid])
        add(sid, "OracleEntity", _ORACLE_REPLIES[sid])
        add(sid, "probe", _PROBE_REPLIES[sid])

    # judge rows; wording varies to exercise the verdict token scan
    def verdict_text(sid: str, correct: bool) -> str:
        if sid == "s01" and correct:
            return "Verdict: CORRECT - the castle is in the Czech Republic"
        if sid == "s02" and not correct:
            return "INCORRECT."
        if sid == "s03":
            return "The answer is CORRECT" if correct else "That is INCORRECT"
        return "CORRECT" if correct else "INCORRECT"

    for sid in _JUDGE_VANILLA:
        add(sid, "judge:Vanilla", verdict_text(sid, _JUDGE_VANILLA[sid]))
        for cond in ("RIR", "RIRMaskImages", "RIRMaskText"):
            add(sid, f"judge:{cond}", verdict_text(sid, _JUDGE_RIR[sid]))
        add(sid, "judge:OracleEntity", verdict_text(sid, _JUDGE_ORACLE[sid]))
    return rows


def build_corpus(root: Path) -> Corpus:
    root.mkdir(parents=True, exist_ok=True)
    images_dir = root / "images"
    thumbs_dir = root / "thumbs"
    images_dir.mkdir(exist_ok=True)
    thumbs_dir.mkdir(exist_ok=True)

    palette = [
        (180, 40, 40), (40, 140, 60), (50, 60, 170), (200, 160, 30),
        (140, 40, 160), (30, 170, 170), (230, 110, 30), (90, 90, 90),
        (20, 100, 30), (150, 30, 90),
    ]
    images: dict[str, Path] = {}
    for i, sid in enumerate(SAMPLES):
        path = images_dir / f"{sid}.png"
        _paint(path, (320, 240), palette[i])
        images[sid] = path

    thumb_paths = []
    for i in range(8):
        path = thumbs_dir / f"thumb{i}.png"
        _paint(path, (64, 48), palette[(i * 3) % len(palette)])
        thumb_paths.append(path)

    unmapped = images_dir / "unmapped.png"
    _paint(unmapped, (320, 240), (5, 5, 5))
    broken = images_dir / "broken.png"
    broken.write_bytes(b"this is not a png at all")

    # dataset manifest
    dataset_manifest = root / "dataset.jsonl"
    with dataset_manifest.open("w", encoding="utf-8") as fh:
        for sid, (cat, question, answers, entity, _name, binomial) in SAMPLES.items():
            row = {
                "id": sid,
                "image": str(images[sid]),
                "question": question,
                "answers": answers,
                "category": cat,
                "wikidata_id": entity,
            }
            if binomial:
                row["binomial"] = binomial
            fh.write(json.dumps(row) + "\n")

    # provider manifest: 8 hits per sample image
    provider_manifest = root / "search_results.jsonl"
    with provider_manifest.open("w", encoding="utf-8") as fh:
        for sid, (cat, _q, _a, _e, name, _b) in SAMPLES.items():
            digest = hashlib.sha256(images[sid].read_bytes()).hexdigest()
            entries = [
                {
                    "title": f"{name} result {i} with a fairly long caption",
                    "source_domain": f"example{i}.org",
                    "thumbnail_path": f"thumbs/thumb{i}.png",
                }
                for i in range(8)
            ]
            fh.write(json.dumps({"image_sha256": digest, "entries": entries}) + "\n")

    backend_fixture = root / "scripted_replies.jsonl"
    with backend_fixture.open("w", encoding="utf-8") as fh:
        for row in _reply_rows():
            fh.write(json.dumps(row) + "\n")

    entity_fixture = root / "entities.json"
    entity_fixture.write_text(
        json.dumps({SAMPLES[s][3]: SAMPLES[s][4] for s in SAMPLES}, indent=2),
        encoding="utf-8",
    )

    counts_csv = root / "search_counts.csv"
    counts_csv.write_text(
        "wikidata_id,count\n"
        + "".join(f"{wid},{count}\n" for wid, count in SEARCH_COUNTS.items()),
        encoding="utf-8",
    )

    config_path = root / "e2e.json"
    config_path.write_text(
        json.dumps(
            {
                "name": "e2e",
                "dataset": "dataset.jsonl",
                "conditions": list(CONDITIONS),
                "backends": [
                    {
                        "id": "scripted",
                        "kind": "scripted",
                        "fixture_path": "scripted_replies.jsonl",
                    }
                ],
                "judge_backend": "scripted",
                "provider": {
                    "kind": "fixture",
                    "manifest": "search_results.jsonl",
                    "result_count": 8,
                },
                "layout": {
                    "canvas_w": 640,
                    "canvas_h": 500,
                    "left_fraction": 0.4,
                    "grid_rows": 2,
                    "grid_cols": 4,
                    "title_strip_h": 24,
                },
                "entity_fixture": "entities.json",
                "counts_csv": "search_counts.csv",
                "seed": 7,
                "output_dir": str(root / "runs" / "e2e"),
            },
            indent=2,
        ),
        encoding="utf-8",
    )

    return Corpus(
        root=root,
        dataset_manifest=dataset_manifest,
        provider_manifest=provider_manifest,
        backend_fixture=backend_fixture,
        entity_fixture=entity_fixture,
        counts_csv=counts_csv,
        config_path=config_path,
        images=images,
        unmapped_image=unmapped,
        broken_image=broken,
    )
