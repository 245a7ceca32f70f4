"""Command-line entry points.

Subcommands: ``run`` (execute an experiment config, resumable), ``query``
(one-off retrieval-augmented question), ``report`` (metric tables from a run
store), ``analyze`` (case sets, bootstrap intervals, agent accounting,
web-presence comparison), and ``probe-entities`` (entity-recall probe).

Exit codes: 0 success or partial failures, 1 analysis/reporting errors,
2 bad configuration or usage, 3 corrupt run store.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis, metrics
from .backends import build_backend
from .capture import compose_capture, save_capture
from .config import ProviderConfig, RunConfig, load_config, write_run_metadata
from .datasets import (
    DatasetManifest,
    EntityCache,
    FixtureEntityClient,
    VisualQuestion,
    WikidataClient,
    load_manifest,
    load_search_counts,
    resolve_entities,
    sample_manifest,
)
from .errors import ConfigError, MissingCondition, RirError, StoreCorrupt
from .messages import Condition, compose_messages
from .providers import CaptureCache, FixtureSearchProvider, LiveProviderSettings, LiveSearchProvider
from .runner import Runner
from .store import RunStore

logger = logging.getLogger(__name__)


def _build_provider(config: ProviderConfig):
    if config.kind == "fixture":
        assert config.manifest is not None
        return FixtureSearchProvider(config.manifest)
    cache = CaptureCache(config.cache_dir) if config.cache_dir else None
    return LiveSearchProvider(
        LiveProviderSettings(endpoint=config.endpoint), cache=cache
    )


def _load_dataset(config: RunConfig) -> DatasetManifest:
    manifest = load_manifest(config.dataset)
    if config.sampling is not None:
        assert config.seed is not None
        manifest = sample_manifest(manifest, config.sampling, config.seed)
    return manifest


def _entity_names(config: RunConfig, manifest: DatasetManifest) -> dict[str, str]:
    ids = sorted({s.entity_id for s in manifest.samples if s.entity_id})
    if not ids:
        return {}
    cache = EntityCache(config.entity_cache) if config.entity_cache else None
    if config.entity_fixture:
        client = FixtureEntityClient.from_json(config.entity_fixture)
    elif cache is not None and all(cache.get(i) for i in ids):
        client = FixtureEntityClient({})  # fully cached; client never called
    else:
        client = WikidataClient()
    records = resolve_entities(ids, client, cache)
    return {wid: rec.entity_name for wid, rec in records.items()}


def _build_runner(config: RunConfig) -> tuple[Runner, DatasetManifest]:
    manifest = _load_dataset(config)
    backends = {d.id: build_backend(d) for d in config.backends}
    provider = _build_provider(config.provider) if config.provider else None
    needs_entities = Condition.ORACLE_ENTITY in config.conditions
    runner = Runner(
        out_dir=config.output_dir,
        backends=backends,
        provider=provider,
        judge_backend_id=config.judge_backend,
        entity_names=_entity_names(config, manifest) if needs_entities else {},
        layout=config.layout,
        result_count=config.provider.result_count if config.provider else 8,
        system_prompt=config.system_prompt,
        concurrency=config.concurrency,
    )
    return runner, manifest


# --- run -------------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.override)
    runner, manifest = _build_runner(config)
    write_run_metadata(config, config.output_dir)
    if args.retry_errors:
        records = runner.store.load()
        kept = [r for r in records if r.error is None]
        if len(kept) != len(records):
            runner.store.rewrite(kept)
            print(f"retrying {len(records) - len(kept)} failed cells")
    try:
        summary = runner.run_batch(manifest, config.conditions)
    except KeyboardInterrupt:
        print("interrupted; store flushed", file=sys.stderr)
        return 0
    print(
        f"run {config.name}: {summary.executed} executed, "
        f"{summary.skipped} skipped, {summary.failures} failures"
    )
    print(f"records: {runner.store.path}")
    return 0


# --- query -----------------------------------------------------------------------


def cmd_query(args: argparse.Namespace) -> int:
    if args.config:
        config = load_config(args.config)
        provider_cfg = config.provider
        backends = config.backend_by_id()
    else:
        provider_cfg = None
        backends = {}
    if args.provider == "fixture":
        manifest_path = args.provider_manifest or (
            provider_cfg.manifest if provider_cfg else None
        )
        if not manifest_path:
            raise ConfigError("fixture provider needs --provider-manifest or a config")
        provider = FixtureSearchProvider(manifest_path)
        k = provider_cfg.result_count if provider_cfg else 8
    else:
        provider = _build_provider(
            provider_cfg
            or ProviderConfig(kind="live", cache_dir=None)
        )
        k = provider_cfg.result_count if provider_cfg else 8

    if args.backend:
        descriptor = backends.get(args.backend)
        if descriptor is None:
            raise ConfigError(f"backend {args.backend!r} not in config")
    elif len(backends) == 1:
        descriptor = next(iter(backends.values()))
    else:
        raise ConfigError("name a --backend (or supply a config with exactly one)")
    backend = build_backend(descriptor)

    vq = VisualQuestion(
        id=args.sample_id,
        image=args.image,
        question=args.text,
        answers=("unused",),
        category="query",
    )
    layout = config.layout if args.config else None
    entries = provider.search(args.image, k)
    capture = compose_capture(args.image, entries, layout,
                              provider_id=provider.provider_id)
    out_dir = Path(args.out)
    capture = save_capture(capture, out_dir / f"{vq.id}.{Condition.RIR.value}.png")
    bundle = compose_messages(vq, Condition.RIR, capture=capture)
    answer = backend.complete(bundle)
    print(answer.answer_text)
    print(f"capture: {capture.path}")
    return 0


# --- report ----------------------------------------------------------------------


def _categories_for(args: argparse.Namespace) -> dict[str, str]:
    if args.config:
        config = load_config(args.config)
        return _load_dataset(config).category_of()
    if args.dataset:
        return load_manifest(args.dataset).category_of()
    raise ConfigError("reporting needs --dataset or --config to map categories")


def _run_dir(args: argparse.Namespace) -> Path:
    if args.run_dir:
        return Path(args.run_dir)
    if args.config:
        return Path(load_config(args.config).output_dir)
    raise ConfigError("name a run directory with -r or supply --config")


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = _run_dir(args)
    store = RunStore(run_dir / "records.jsonl")
    records = store.load()
    if not records:
        raise ConfigError(f"no records found under {run_dir}")
    categories = _categories_for(args)

    by_pair: dict[tuple[str, str], list] = {}
    for record in records:
        by_pair.setdefault((record.backend_id, record.condition), []).append(record)

    baseline_cond = args.baseline_condition
    reports: dict[str, metrics.MetricsReport] = {}
    for (backend_id, condition), pair_records in sorted(by_pair.items()):
        baseline = None
        base_key = (backend_id, baseline_cond)
        if condition != baseline_cond and base_key in by_pair:
            baseline = metrics.aggregate_report(by_pair[base_key], categories)
        elif condition != baseline_cond and args.delta:
            raise MissingCondition(
                f"no {baseline_cond} records for backend {backend_id}"
            )
        reports[f"{backend_id}/{condition}"] = metrics.aggregate_report(
            pair_records, categories, baseline=baseline
        )

    reports_dir = run_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    payload = {label: rep.to_dict() for label, rep in reports.items()}
    (reports_dir / "metrics.json").write_text(
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    table = metrics.render_category_table(reports)
    (reports_dir / "metrics.txt").write_text(table, encoding="utf-8")
    if args.csv:
        (reports_dir / "metrics.csv").write_text(
            metrics.render_category_csv(reports), encoding="utf-8"
        )
    if args.plots:
        _plot_condition_accuracy(reports, reports_dir / "fig_condition_accuracy.png")
        if args.counts:
            _plot_presence(args, records, categories, reports_dir)
    print(table)
    print(f"reports written to {reports_dir}")
    return 0


def _plot_condition_accuracy(reports, out_path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels, values = [], []
    for label, rep in reports.items():
        acc = rep.averages.get("judge_acc")
        if acc is not None:
            labels.append(label)
            values.append(acc)
    if not labels:
        return
    fig, ax = plt.subplots(figsize=(max(4, len(labels) * 1.2), 4))
    ax.bar(labels, values, color="#4C8BF5")
    ax.set_ylabel("judge accuracy (%)")
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def _plot_presence(args, records, categories, reports_dir: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    counts = load_search_counts(args.counts)
    entity_ids = _entity_ids_for(args)
    vanilla = analysis.correctness_map(records, args.baseline_condition)
    treated = analysis.correctness_map(records, Condition.RIR.value)
    if not vanilla or not treated:
        return
    shared = sorted(set(vanilla) & set(treated))
    cases = analysis.classify_cases(
        {i: vanilla[i] for i in shared}, {i: treated[i] for i in shared}
    )
    helping = [counts[entity_ids[i]] for i in cases.helping
               if entity_ids.get(i) in counts]
    hurting = [counts[entity_ids[i]] for i in cases.hurting
               if entity_ids.get(i) in counts]
    if not helping or not hurting:
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.linspace(
        min(np.log10(helping + hurting)), max(np.log10(helping + hurting)), 20
    )
    ax.hist(np.log10(helping), bins=bins, alpha=0.6, label="helping")
    ax.hist(np.log10(hurting), bins=bins, alpha=0.6, label="hurting")
    ax.set_xlabel("log10 search-result count")
    ax.set_ylabel("samples")
    ax.legend()
    fig.tight_layout()
    fig.savefig(reports_dir / "fig_presence_hist.png")
    plt.close(fig)


def _entity_ids_for(args) -> dict[str, str]:
    if args.config:
        manifest = _load_dataset(load_config(args.config))
    elif args.dataset:
        manifest = load_manifest(args.dataset)
    else:
        return {}
    return {s.id: s.entity_id for s in manifest.samples if s.entity_id}


# --- analyze ---------------------------------------------------------------------


def _parse_agent_spec(tokens: list[str]) -> analysis.AgentModel:
    fields = {}
    for token in tokens:
        key, sep, value = token.partition("=")
        if not sep:
            raise ConfigError(f"agent spec {token!r} is not key=value")
        fields[key] = value
    try:
        return analysis.AgentModel(
            n=int(fields["n"]),
            p=int(fields["p"]),
            q_hurt=int(fields.get("q_hurt", fields.get("q", 0))),
            a=float(fields["a"]),
            b=float(fields["b"]),
            base_rir_correct=int(fields.get("base", fields.get("base_rir_correct", 0))),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad agent spec: {exc}") from exc


def cmd_analyze(args: argparse.Namespace) -> int:
    if args.agent and not args.run_dir and not args.config:
        model = _parse_agent_spec(args.agent)
        outcome = analysis.agent_analysis(model)
        print(
            f"expected accuracy: {outcome.expected_accuracy:.2f}% "
            f"({outcome.expected_correct:.2f}/{model.n}), {outcome.dominance.value}"
        )
        return 0

    run_dir = _run_dir(args)
    store = RunStore(run_dir / "records.jsonl")
    records = store.load()
    if not records:
        raise ConfigError(f"no records found under {run_dir}")
    categories = _categories_for(args)
    reports_dir = run_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    result: dict = {}

    vanilla = analysis.correctness_map(records, args.baseline_condition, args.metric)
    treated = analysis.correctness_map(records, args.condition, args.metric)
    shared = sorted(set(vanilla) & set(treated))
    vanilla = {i: vanilla[i] for i in shared}
    treated = {i: treated[i] for i in shared}
    cases = None
    if shared:
        cases = analysis.classify_cases(vanilla, treated, categories)
        sizes = {
            cat: sum(1 for i in vanilla if categories[i] == cat)
            for cat in set(categories[i] for i in vanilla)
        }
        rows = analysis.net_gain_table(cases, sizes)
        result["cases"] = {
            "helping": list(cases.helping),
            "hurting": list(cases.hurting),
            "neutral": list(cases.neutral),
        }
        result["net_gain"] = [row.__dict__ for row in rows]
        (reports_dir / "net_gain.txt").write_text(
            analysis.render_net_gain_table(rows) + "\n", encoding="utf-8"
        )

        base_correct = sum(treated.values())
        model = _parse_agent_spec(args.agent) if args.agent else None
        grid_axis = [round(0.1 * i, 1) for i in range(11)]
        result["agent_sweep"] = analysis.agent_sweep(
            n=len(vanilla),
            p=cases.p,
            q_hurt=cases.q_hurt,
            base_rir_correct=base_correct,
            a_values=grid_axis,
            b_values=grid_axis,
        )
        if model is not None:
            outcome = analysis.agent_analysis(model)
            result["agent"] = {
                "expected_correct": outcome.expected_correct,
                "expected_accuracy": outcome.expected_accuracy,
                "dominance": outcome.dominance.value,
            }
            print(
                f"expected accuracy: {outcome.expected_accuracy:.2f}%, "
                f"{outcome.dominance.value}"
            )

    by_pair: dict[tuple[str, str], list] = {}
    for record in records:
        by_pair.setdefault((record.backend_id, record.condition), []).append(record)
    result["confidence_intervals"] = {
        f"{backend_id}/{condition}": analysis.ci_tables(
            pair_records,
            categories,
            iterations=args.iterations,
            level=args.level,
            seed=args.seed,
        )
        for (backend_id, condition), pair_records in sorted(by_pair.items())
    }

    if args.counts:
        if cases is None:
            raise MissingCondition(
                "presence comparison needs both baseline and treated conditions"
            )
        counts = load_search_counts(args.counts)
        entity_ids = _entity_ids_for(args)
        helping = [counts[entity_ids[i]] for i in cases.helping
                   if entity_ids.get(i) in counts]
        hurting = [counts[entity_ids[i]] for i in cases.hurting
                   if entity_ids.get(i) in counts]
        if helping and hurting:
            ks = analysis.presence_compare(helping, hurting)
            result["presence_ks"] = {"d": ks.d, "p_value": ks.p_value}
            print(f"presence KS: D={ks.d:.4f}, p={ks.p_value:.4f}")

    (reports_dir / "analysis.json").write_text(
        json.dumps(result, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(f"analysis written to {reports_dir / 'analysis.json'}")
    return 0


# --- probe-entities --------------------------------------------------------------


def cmd_probe_entities(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.override)
    runner, manifest = _build_runner(config)
    # the probe always needs entity names, even when the run conditions don't
    if not runner.entity_names:
        runner.entity_names = _entity_names(config, manifest)
    results = runner.probe_entities(manifest, backend_id=args.backend)
    out_path = Path(config.output_dir) / "probes.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as fh:
        for row in results:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    scored = [r for r in results if r.get("hit") is not None]
    hits = sum(1 for r in scored if r["hit"])
    if scored:
        print(f"entity recall: {100.0 * hits / len(scored):.2f}% ({hits}/{len(scored)})")
    print(f"probe replies: {out_path}")
    return 0


# --- wiring ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rir",
        description="Retrieval-augmented visual question answering harness",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("-c", "--config", required=True)
    p_run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p_run.add_argument("--retry-errors", action="store_true",
                       help="re-run only cells that previously failed")
    p_run.set_defaults(func=cmd_run)

    p_query = sub.add_parser("query", help="answer a single image question")
    p_query.add_argument("--image", required=True)
    p_query.add_argument("--text", required=True)
    p_query.add_argument("--provider", choices=["fixture", "live"], default="live")
    p_query.add_argument("--provider-manifest")
    p_query.add_argument("--backend", help="backend id from the config")
    p_query.add_argument("-c", "--config")
    p_query.add_argument("--out", default="query_captures")
    p_query.add_argument("--sample-id", default="query")
    p_query.set_defaults(func=cmd_query)

    p_report = sub.add_parser("report", help="metric tables from a run store")
    p_report.add_argument("-r", "--run-dir")
    p_report.add_argument("-c", "--config")
    p_report.add_argument("--dataset", help="manifest for category mapping")
    p_report.add_argument("--baseline-condition", default=Condition.VANILLA.value)
    p_report.add_argument("--delta", action="store_true",
                          help="fail unless the baseline condition is present")
    p_report.add_argument("--csv", action="store_true")
    p_report.add_argument("--plots", action="store_true")
    p_report.add_argument("--counts", help="wikidata_id,count CSV for presence plot")
    p_report.set_defaults(func=cmd_report)

    p_an = sub.add_parser("analyze", help="case sets, intervals, agent accounting")
    p_an.add_argument("-r", "--run-dir")
    p_an.add_argument("-c", "--config")
    p_an.add_argument("--dataset")
    p_an.add_argument("--baseline-condition", default=Condition.VANILLA.value)
    p_an.add_argument("--condition", default=Condition.RIR.value)
    p_an.add_argument("--metric", choices=["judge", "recall"], default="judge")
    p_an.add_argument("--agent", nargs="+", metavar="KEY=VALUE",
                      help="agent accounting, e.g. p=221 q=94 a=0.58 b=0.29 n=1650 base=774")
    p_an.add_argument("--counts", help="wikidata_id,count CSV")
    p_an.add_argument("--iterations", type=int, default=1000)
    p_an.add_argument("--level", type=float, default=0.95)
    p_an.add_argument("--seed", type=int, default=7)
    p_an.set_defaults(func=cmd_analyze)

    p_probe = sub.add_parser("probe-entities", help="entity-recall probe over captures")
    p_probe.add_argument("-c", "--config", required=True)
    p_probe.add_argument("--backend")
    p_probe.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p_probe.set_defaults(func=cmd_probe_entities)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StoreCorrupt as exc:
        print(f"store corrupt: {exc}", file=sys.stderr)
        return 3
    except RirError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
