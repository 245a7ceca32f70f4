"""Full pipeline over the demo corpus: run, resume, report, analyze, probe.

Everything is fixture-backed and deterministic; re-running this script adds
zero new records and regenerates byte-identical reports.
"""

import importlib
import json

from rir.cli import main

corpus_builder = importlib.import_module("00_build_demo_corpus")

root = corpus_builder.ensure_corpus()
config = str(root / "demo.json")
run_dir = root / "runs" / "demo"

print("== rir run ==")
main(["run", "-c", config])

print("\n== rir run (again: resume adds nothing) ==")
main(["run", "-c", config])

print("\n== rir report ==")
main(["report", "-r", str(run_dir), "-c", config, "--csv", "--plots",
      "--counts", str(root / "search_counts.csv")])

print("\n== rir analyze ==")
main(["analyze", "-r", str(run_dir), "-c", config,
      "--counts", str(root / "search_counts.csv"), "--iterations", "500"])

print("\n== rir analyze --agent (pure accounting, no run needed) ==")
main(["analyze", "--agent", "p=221", "q=94", "a=0.5792", "b=0.2872",
      "n=1650", "base=774"])

print("\n== rir probe-entities ==")
main(["probe-entities", "-c", config])

print("\n== rir query (single-shot) ==")
main(["query", "--image", str(root / "images" / "d01.png"),
      "--text", "Which country is this facility in?",
      "--provider", "fixture", "--backend", "scripted", "-c", config,
      "--out", str(root / "runs" / "query"), "--sample-id", "d01"])

records = (run_dir / "records.jsonl").read_text().splitlines()
errors = sum(1 for line in records if json.loads(line)["error"])
print(f"\nrun store: {len(records)} records, {errors} errors -> {run_dir}")
