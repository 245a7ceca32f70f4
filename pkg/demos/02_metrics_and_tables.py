"""The evaluation metrics, one by one, then an aggregated category table."""

from rir import answer_in_prediction, normalize_text, snake_metrics
from rir.metrics import aggregate_report, render_category_table
from rir.store import RunRecord

print("normalize_text('Czech  Republic.') ->", repr(normalize_text("Czech  Republic.")))

print("\nanswer-in-prediction recall:")
for answers, prediction in [
    (["Czech Republic"], "This castle is in the Czech Republic."),
    (["Czech Republic"], "It is in Czechia."),
    (["red", "crimson"], "a deep crimson hue"),
]:
    print(f"  {answers} in {prediction!r} -> "
          f"{answer_in_prediction(answers, prediction)}")

print("\nspecies metrics (binomial EM, genus EM, binomial recall, genus recall):")
for gt, prediction in [
    ("Crotalus viridis", "Crotalus viridis"),
    ("Crotalus viridis", "Likely Crotalus atrox, a rattlesnake."),
    ("Virginia valeriae", "This is a Smooth Earth Snake."),
]:
    print(f"  gt={gt!r} pred={prediction!r} -> "
          f"{snake_metrics(gt, prediction).as_tuple()}")


def record(sid, condition, judge, recall):
    return RunRecord(sample_id=sid, condition=condition, backend_id="demo",
                     capture_path="captures/x.RIR.png" if condition == "RIR" else None,
                     answer_text="answer", judge_correct=judge, recall_hit=recall,
                     snake_verdicts=None, started_at="t", finished_at="t", error=None)


categories = {}
vanilla_records, rir_records = [], []
pattern = {
    "facility": [(False, True), (False, True)],
    "food": [(True, True), (True, False)],
}
for cat, outcomes in pattern.items():
    for i, (vanilla_ok, rir_ok) in enumerate(outcomes):
        sid = f"{cat}-{i}"
        categories[sid] = cat
        vanilla_records.append(record(sid, "Vanilla", vanilla_ok, vanilla_ok))
        rir_records.append(record(sid, "RIR", rir_ok, rir_ok))

baseline = aggregate_report(vanilla_records, categories)
augmented = aggregate_report(rir_records, categories, baseline=baseline)
print("\naggregate table (relative change vs the vanilla rows):\n")
print(render_category_table({"demo/Vanilla": baseline, "demo/RIR": augmented}))
