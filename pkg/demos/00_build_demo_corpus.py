"""Build the small self-contained corpus the other demos run against.

Writes images, a dataset manifest, a fixture search-result manifest, scripted
backend replies (including judge verdicts and probe replies), an entity-name
table, a search-count CSV, and a run config into demos/_corpus/.
"""

import hashlib
import json
from pathlib import Path

from PIL import Image, ImageDraw

ROOT = Path(__file__).parent / "_corpus"

SAMPLES = {
    "d01": ("facility", "Which country is this facility in?",
            ["Czech Republic"], "Q101", "Bouzov Castle", None),
    "d02": ("building", "In which year was this building completed?",
            ["1931"], "Q103", "Empire State Building", None),
    "d03": ("food", "Which country does this dish come from?",
            ["Italy"], "Q105", "Margherita pizza", None),
    "d04": ("snake", "What species of snake is shown?",
            ["Crotalus viridis"], "Q109", "Prairie rattlesnake",
            "Crotalus viridis"),
}

VANILLA = {
    "d01": "It looks like a castle somewhere in Europe.",
    "d02": "It was completed in 1931.",
    "d03": "Some kind of flatbread.",
    "d04": "This is some rattlesnake.",
}
RIR = {
    "d01": "This is Bouzov Castle in the Czech Republic.",
    "d02": "Empire State Building, completed in 1931.",
    "d03": "A Margherita pizza from Italy.",
    "d04": "Likely Crotalus atrox, a rattlesnake.",
}
ORACLE = {
    "d01": "Bouzov Castle is in the Czech Republic.",
    "d02": "The Empire State Building was completed in 1931.",
    "d03": "The Margherita pizza comes from Italy.",
    "d04": "Crotalus viridis, the prairie rattlesnake.",
}
PROBE = {
    "d01": "Bouzov Castle",
    "d02": "a tall skyscraper",
    "d03": "Margherita pizza",
    "d04": "Prairie rattlesnake",
}
JUDGE = {  # (vanilla correct, retrieval correct)
    "d01": (False, True),
    "d02": (True, True),
    "d03": (False, True),
}


def paint(path: Path, size, color) -> None:
    img = Image.new("RGB", size, color)
    draw = ImageDraw.Draw(img)
    w, h = size
    draw.ellipse((w // 4, h // 4, 3 * w // 4, 3 * h // 4),
                 fill=tuple(255 - c for c in color))
    img.save(path, format="PNG")


def build() -> Path:
    images = ROOT / "images"
    thumbs = ROOT / "thumbs"
    images.mkdir(parents=True, exist_ok=True)
    thumbs.mkdir(exist_ok=True)

    palette = [(170, 40, 40), (40, 130, 70), (60, 60, 170), (200, 150, 40)]
    for i, sid in enumerate(SAMPLES):
        paint(images / f"{sid}.png", (320, 240), palette[i])
    for i in range(8):
        paint(thumbs / f"thumb{i}.png", (64, 48), palette[i % 4])

    with (ROOT / "dataset.jsonl").open("w") as fh:
        for sid, (cat, question, answers, wid, _name, binomial) in SAMPLES.items():
            row = {"id": sid, "image": str(images / f"{sid}.png"),
                   "question": question, "answers": answers, "category": cat,
                   "wikidata_id": wid}
            if binomial:
                row["binomial"] = binomial
            fh.write(json.dumps(row) + "\n")

    with (ROOT / "search_results.jsonl").open("w") as fh:
        for sid, (_c, _q, _a, _w, name, _b) in SAMPLES.items():
            digest = hashlib.sha256((images / f"{sid}.png").read_bytes()).hexdigest()
            entries = [{"title": f"{name} result {i}",
                        "source_domain": f"example{i}.org",
                        "thumbnail_path": f"thumbs/thumb{i}.png"}
                       for i in range(8)]
            fh.write(json.dumps({"image_sha256": digest, "entries": entries}) + "\n")

    with (ROOT / "scripted_replies.jsonl").open("w") as fh:
        def add(sid, condition, reply):
            fh.write(json.dumps({"sample_id": sid, "condition": condition,
                                 "reply": reply}) + "\n")

        for sid in SAMPLES:
            add(sid, "Vanilla", VANILLA[sid])
            for cond in ("RIR", "RIRMaskImages", "RIRMaskText"):
                add(sid, cond, RIR[sid])
            add(sid, "OracleEntity", ORACLE[sid])
            add(sid, "probe", PROBE[sid])
        for sid, (vanilla_ok, rir_ok) in JUDGE.items():
            add(sid, "judge:Vanilla", "CORRECT" if vanilla_ok else "INCORRECT")
            for cond in ("RIR", "RIRMaskImages", "RIRMaskText"):
                add(sid, f"judge:{cond}", "CORRECT" if rir_ok else "INCORRECT")
            add(sid, "judge:OracleEntity", "CORRECT")

    (ROOT / "entities.json").write_text(json.dumps(
        {spec[3]: spec[4] for spec in SAMPLES.values()}, indent=2))

    (ROOT / "search_counts.csv").write_text(
        "wikidata_id,count\nQ101,9200\nQ103,52000000\nQ105,640000\nQ109,450000\n")

    (ROOT / "demo.json").write_text(json.dumps({
        "name": "demo",
        "dataset": "dataset.jsonl",
        "conditions": ["Vanilla", "RIR", "RIRMaskImages", "RIRMaskText",
                       "OracleEntity"],
        "backends": [{"id": "scripted", "kind": "scripted",
                      "fixture_path": "scripted_replies.jsonl"}],
        "judge_backend": "scripted",
        "provider": {"kind": "fixture", "manifest": "search_results.jsonl",
                     "result_count": 8},
        "layout": {"canvas_w": 640, "canvas_h": 500, "left_fraction": 0.4,
                   "grid_rows": 2, "grid_cols": 4, "title_strip_h": 24},
        "entity_fixture": "entities.json",
        "counts_csv": "search_counts.csv",
        "seed": 7,
        "output_dir": str(ROOT / "runs" / "demo"),
    }, indent=2))
    return ROOT


def ensure_corpus() -> Path:
    if not (ROOT / "demo.json").exists():
        build()
    return ROOT


if __name__ == "__main__":
    build()
    print(f"demo corpus written to {ROOT}")
