"""Run configuration: one JSON file defines an experiment, flags override it.

Secrets never appear in config files; http-chat backends name the
environment variable that holds their token.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .backends import BackendDescriptor, RetryPolicy
from .capture import LayoutSpec
from .datasets import SamplePlan
from .errors import ConfigError, ParseError
from .messages import SYSTEM_PROMPT, Condition


@dataclass(frozen=True)
class ProviderConfig:
    kind: str  # "fixture" | "live"
    manifest: str | None = None       # fixture: path to results manifest
    cache_dir: str | None = None      # live: on-disk capture cache
    endpoint: str = "http://127.0.0.1:9222"
    result_count: int = 8

    def __post_init__(self) -> None:
        if self.kind not in ("fixture", "live"):
            raise ConfigError(f"unknown provider kind {self.kind!r}")
        if self.kind == "fixture" and not self.manifest:
            raise ConfigError("fixture provider needs a manifest path")
        if self.result_count < 1:
            raise ConfigError("result_count must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    name: str
    dataset: str
    conditions: tuple[Condition, ...]
    backends: tuple[BackendDescriptor, ...]
    output_dir: str
    provider: ProviderConfig | None = None
    judge_backend: str | None = None
    layout: LayoutSpec = field(default_factory=LayoutSpec)
    sampling: SamplePlan | None = None
    seed: int | None = None
    concurrency: int = 1
    system_prompt: str = SYSTEM_PROMPT
    entity_fixture: str | None = None
    entity_cache: str | None = None
    counts_csv: str | None = None

    def __post_init__(self) -> None:
        if not self.backends:
            raise ConfigError("at least one backend is required")
        ids = [b.id for b in self.backends]
        if len(set(ids)) != len(ids):
            raise ConfigError("backend ids must be unique")
        if self.judge_backend is not None and self.judge_backend not in ids:
            raise ConfigError(f"judge backend {self.judge_backend!r} is not defined")
        if any(c.is_rir for c in self.conditions) and self.provider is None:
            raise ConfigError("retrieval conditions need a provider")
        if self.sampling is not None and self.seed is None:
            raise ConfigError("sampling requires a seed")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        if self.provider is not None and self.provider.result_count > self.layout.capacity:
            raise ConfigError(
                f"result_count {self.provider.result_count} exceeds the "
                f"{self.layout.grid_rows}x{self.layout.grid_cols} grid"
            )

    def backend_by_id(self) -> dict[str, BackendDescriptor]:
        return {b.id: b for b in self.backends}


def _parse_retry(raw: dict) -> RetryPolicy:
    return RetryPolicy(
        max_attempts=raw.get("max_attempts", 3),
        base_delay=raw.get("base_delay", 1.0),
        multiplier=raw.get("multiplier", 2.0),
        retryable_statuses=frozenset(
            raw.get("retryable_statuses", (429, 500, 502, 503, 504))
        ),
    )


def _parse_backend(raw: dict, base: Path) -> BackendDescriptor:
    fixture = raw.get("fixture_path")
    if fixture is not None:
        fixture = str(_resolve(base, fixture))
    return BackendDescriptor(
        id=raw["id"],
        kind=raw["kind"],
        endpoint_url=raw.get("endpoint_url"),
        model_name=raw.get("model_name"),
        auth_env_var=raw.get("auth_env_var"),
        fixture_path=fixture,
        temperature=raw.get("temperature", 0.0),
        max_tokens=raw.get("max_tokens", 512),
        retry=_parse_retry(raw.get("retry", {})),
        rate_limit_per_minute=raw.get("rate_limit_per_minute"),
    )


def _resolve(base: Path, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``key=value`` (dots descend into sections) onto raw config data."""
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        target = raw
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"override {key!r} crosses a non-object value")
        try:
            target[parts[-1]] = json.loads(value)
        except json.JSONDecodeError:
            target[parts[-1]] = value
    return raw


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    """Load and validate a run config, resolving relative paths against the
    config file's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from exc
    if overrides:
        raw = apply_overrides(raw, list(overrides))
    base = path.parent

    try:
        conditions = tuple(Condition.parse(c) for c in raw.get("conditions", []))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not conditions:
        raise ConfigError("config must list at least one condition")

    provider = None
    if raw.get("provider"):
        p = raw["provider"]
        manifest = p.get("manifest")
        provider = ProviderConfig(
            kind=p.get("kind", "fixture"),
            manifest=str(_resolve(base, manifest)) if manifest else None,
            cache_dir=p.get("cache_dir"),
            endpoint=p.get("endpoint", "http://127.0.0.1:9222"),
            result_count=p.get("result_count", 8),
        )

    sampling = None
    if raw.get("sampling"):
        s = raw["sampling"]
        try:
            sampling = SamplePlan(
                per_category=s.get("per_category"), total=s.get("total")
            )
        except ParseError as exc:
            raise ConfigError(str(exc)) from exc

    try:
        layout = LayoutSpec(**raw.get("layout", {}))
        backends = tuple(_parse_backend(b, base) for b in raw.get("backends", []))
    except (ParseError, TypeError, KeyError) as exc:
        raise ConfigError(f"bad config section: {exc}") from exc

    name = raw.get("name") or path.stem
    output_dir = raw.get("output_dir") or str(Path("runs") / name)

    def _opt_path(key: str) -> str | None:
        value = raw.get(key)
        return str(_resolve(base, value)) if value else None

    config = RunConfig(
        name=name,
        dataset=str(_resolve(base, raw["dataset"])) if raw.get("dataset") else "",
        conditions=conditions,
        backends=backends,
        output_dir=output_dir,
        provider=provider,
        judge_backend=raw.get("judge_backend"),
        layout=layout,
        sampling=sampling,
        seed=raw.get("seed"),
        concurrency=raw.get("concurrency", 1),
        system_prompt=raw.get("system_prompt", SYSTEM_PROMPT),
        entity_fixture=_opt_path("entity_fixture"),
        entity_cache=_opt_path("entity_cache"),
        counts_csv=_opt_path("counts_csv"),
    )
    if not config.dataset:
        raise ConfigError("config must name a dataset manifest")
    return config


def write_run_metadata(config: RunConfig, out_dir: str | Path) -> None:
    """Echo the effective prompts and decoding parameters next to the records."""
    from .backends import JUDGE_SYSTEM, JUDGE_USER_TEMPLATE

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": config.name,
        "dataset": config.dataset,
        "conditions": [c.value for c in config.conditions],
        "backends": [
            {
                "id": b.id,
                "kind": b.kind,
                "model_name": b.model_name,
                "temperature": b.temperature,
                "max_tokens": b.max_tokens,
            }
            for b in config.backends
        ],
        "judge_backend": config.judge_backend,
        "system_prompt": config.system_prompt,
        "judge_prompt": f"{JUDGE_SYSTEM} {JUDGE_USER_TEMPLATE}",
        "seed": config.seed,
        "sampling": {
            "per_category": config.sampling.per_category,
            "total": config.sampling.total,
        }
        if config.sampling
        else None,
    }
    (out / "run_meta.json").write_text(
        json.dumps(meta, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
