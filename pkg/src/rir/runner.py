"""End-to-end execution of (sample, condition, backend) cells.

For retrieval conditions each cell runs search, capture composition,
optional masking, prompt composition, and the chat call, in that order;
the answer is then graded and the record appended to the run store.
Provider and backend failures become error records instead of aborting the
batch.  Records are written in deterministic cell order even when cells
execute concurrently.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from PIL import Image

from . import metrics
from .backends import Backend, chat, entity_probe, judge
from .capture import LayoutSpec, apply_mask, compose_capture, save_capture
from .datasets import DatasetManifest, VisualQuestion
from .errors import (
    BackendError,
    MalformedResponse,
    MissingEntity,
    ProviderError,
    UndecodableImage,
    UnparseableVerdict,
)
from .messages import SYSTEM_PROMPT, Condition, PromptBundle, compose_messages
from .providers import SearchProvider, search
from .store import PromptStore, RunRecord, RunStore

logger = logging.getLogger(__name__)

#: Exceptions recorded on the run record rather than raised out of a batch.
_RECORDED_ERRORS = (ProviderError, BackendError, MissingEntity, UndecodableImage)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class BatchSummary:
    executed: int
    skipped: int
    failures: int


class Runner:
    """Drives samples through the pipeline and persists the outcomes.

    ``entity_names`` maps wikidata ids to display names for the oracle
    condition; resolve them beforehand via :func:`rir.datasets.resolve_entities`.
    """

    def __init__(
        self,
        out_dir: str | Path,
        backends: Mapping[str, Backend],
        provider: SearchProvider | None = None,
        judge_backend_id: str | None = None,
        entity_names: Mapping[str, str] | None = None,
        layout: LayoutSpec | None = None,
        result_count: int = 8,
        system_prompt: str = SYSTEM_PROMPT,
        concurrency: int = 1,
    ):
        self.out_dir = Path(out_dir)
        self.captures_dir = self.out_dir / "captures"
        self.store = RunStore(self.out_dir / "records.jsonl")
        self.prompt_store = PromptStore(self.out_dir / "prompts.jsonl")
        self.backends = dict(backends)
        self.provider = provider
        self.judge_backend_id = judge_backend_id
        self.entity_names = dict(entity_names or {})
        self.layout = layout or LayoutSpec()
        self.result_count = result_count
        self.system_prompt = system_prompt
        self.concurrency = max(1, concurrency)
        if judge_backend_id is not None and judge_backend_id not in self.backends:
            raise ValueError(f"unknown judge backend {judge_backend_id!r}")

    # --- single cell -----------------------------------------------------------

    def run_condition(
        self,
        vq: VisualQuestion,
        condition: Condition,
        backend_id: str | None = None,
        record: bool = True,
    ) -> RunRecord:
        """Execute one cell and (by default) append its record to the store."""
        if backend_id is None:
            backend_id = next(iter(self.backends))
        backend = self.backends[backend_id]
        started = _now()
        capture_path: str | None = None
        bundle: PromptBundle | None = None
        answer_text = ""
        error: str | None = None

        try:
            if condition.is_rir:
                if self.provider is None:
                    raise ValueError(f"{condition.value} requires a search provider")
                entries = search(self.provider, vq.image, self.result_count)
                capture = compose_capture(
                    vq.image,
                    entries,
                    self.layout,
                    provider_id=self.provider.provider_id,
                )
                capture = apply_mask(capture, condition.mask_mode)
                path = self.captures_dir / f"{vq.id}.{condition.value}.png"
                capture = save_capture(capture, path)
                capture_path = str(path.relative_to(self.out_dir))
                bundle = compose_messages(
                    vq, condition, capture=capture, system_prompt=self.system_prompt
                )
            elif condition is Condition.ORACLE_ENTITY:
                name = self.entity_names.get(vq.entity_id or "")
                if not name:
                    raise MissingEntity(
                        f"no entity name for sample {vq.id} (id {vq.entity_id!r})"
                    )
                bundle = compose_messages(
                    vq, condition, entity_name=name, system_prompt=self.system_prompt
                )
            else:
                bundle = compose_messages(vq, condition, system_prompt=self.system_prompt)

            self.prompt_store.append(bundle, backend_id)
            answer_text = chat(backend, bundle).answer_text
            if not answer_text:
                raise MalformedResponse("backend returned an empty answer")
        except _RECORDED_ERRORS as exc:
            error = f"{type(exc).__name__}: {exc}"
            logger.warning("cell (%s, %s, %s) failed: %s",
                           vq.id, condition.value, backend_id, error)

        judge_correct: bool | None = None
        recall_hit: bool | None = None
        snake_verdicts = None
        if error is None:
            recall_hit = metrics.answer_in_prediction(vq.answers, answer_text)
            if vq.binomial is not None:
                snake_verdicts = metrics.snake_metrics(vq.binomial, answer_text).as_tuple()
            elif self.judge_backend_id is not None and answer_text.strip():
                try:
                    verdict = judge(
                        self.backends[self.judge_backend_id],
                        vq.question,
                        vq.answers,
                        answer_text,
                        sample_id=vq.id,
                        condition=condition.value,
                    )
                    judge_correct = verdict.correct
                except UnparseableVerdict as exc:
                    logger.warning("judge verdict unparseable for %s/%s: %s",
                                   vq.id, condition.value, exc)
                except BackendError as exc:
                    logger.warning("judge call failed for %s/%s: %s",
                                   vq.id, condition.value, exc)

        run_record = RunRecord(
            sample_id=vq.id,
            condition=condition.value,
            backend_id=backend_id,
            capture_path=capture_path,
            answer_text=answer_text,
            judge_correct=judge_correct,
            recall_hit=recall_hit,
            snake_verdicts=snake_verdicts,
            started_at=started,
            finished_at=_now(),
            error=error,
        )
        if record:
            self.store.append(run_record)
        return run_record

    # --- batches ---------------------------------------------------------------

    def run_batch(
        self,
        manifest: DatasetManifest,
        conditions: Sequence[Condition],
        backend_ids: Sequence[str] | None = None,
        resume: bool = True,
    ) -> BatchSummary:
        """Run every (sample, condition, backend) cell not already stored.

        Cells execute under a bounded worker pool but their records are
        appended in cell order, so repeated runs yield identical stores.
        """
        backend_ids = list(backend_ids or self.backends)
        existing = self.store.keys() if resume else set()
        decodable = self._precheck_images(manifest.samples)

        cells = [
            (vq, condition, backend_id)
            for vq in manifest.samples
            for condition in conditions
            for backend_id in backend_ids
        ]
        todo = [
            cell for cell in cells
            if (cell[0].id, cell[1].value, cell[2]) not in existing
        ]
        skipped = len(cells) - len(todo)

        failures = 0
        if self.concurrency == 1:
            for vq, condition, backend_id in todo:
                record = self._run_precheck(vq, condition, backend_id, decodable)
                failures += record.error is not None
        else:
            with ThreadPoolExecutor(max_workers=self.concurrency) as pool:
                futures = [
                    pool.submit(self._run_precheck, vq, condition, backend_id,
                                decodable, record=False)
                    for vq, condition, backend_id in todo
                ]
                try:
                    for future in futures:
                        record = future.result()
                        self.store.append(record)
                        failures += record.error is not None
                except KeyboardInterrupt:
                    pool.shutdown(wait=False, cancel_futures=True)
                    raise
        return BatchSummary(executed=len(todo), skipped=skipped, failures=failures)

    def _run_precheck(
        self,
        vq: VisualQuestion,
        condition: Condition,
        backend_id: str,
        decodable: Mapping[str, str | None],
        record: bool = True,
    ) -> RunRecord:
        problem = decodable.get(vq.id)
        if problem is not None:
            started = _now()
            bad = RunRecord(
                sample_id=vq.id,
                condition=condition.value,
                backend_id=backend_id,
                capture_path=None,
                answer_text="",
                judge_correct=None,
                recall_hit=None,
                snake_verdicts=None,
                started_at=started,
                finished_at=_now(),
                error=problem,
            )
            if record:
                self.store.append(bad)
            return bad
        return self.run_condition(vq, condition, backend_id, record=record)

    def _precheck_images(
        self, samples: Sequence[VisualQuestion]
    ) -> dict[str, str | None]:
        """Decode every sample image once, up front; failures map to an error
        string applied to all of that sample's cells."""
        out: dict[str, str | None] = {}
        for vq in samples:
            try:
                with Image.open(vq.image) as img:
                    img.verify()
                out[vq.id] = None
            except Exception as exc:
                out[vq.id] = f"UndecodableImage: {vq.image}: {exc}"
        return out

    # --- entity-recall probe ------------------------------------------------------

    def probe_entities(
        self,
        manifest: DatasetManifest,
        backend_id: str | None = None,
    ) -> list[dict]:
        """Show each sample's capture to the backend and ask it to name the
        entity; a reply containing the resolved name counts as a recall hit."""
        if self.provider is None:
            raise ValueError("probing requires a search provider")
        if backend_id is None:
            backend_id = next(iter(self.backends))
        backend = self.backends[backend_id]
        results = []
        for vq in manifest.samples:
            name = self.entity_names.get(vq.entity_id or "")
            try:
                entries = search(self.provider, vq.image, self.result_count)
                capture = compose_capture(
                    vq.image, entries, self.layout,
                    provider_id=self.provider.provider_id,
                )
                path = self.captures_dir / f"{vq.id}.{Condition.RIR.value}.png"
                capture = save_capture(capture, path)
                reply = entity_probe(
                    backend, capture, sample_id=vq.id, system_prompt=self.system_prompt
                )
                hit = (
                    metrics.answer_in_prediction([name], reply) if name else None
                )
                results.append(
                    {"sample_id": vq.id, "entity_name": name, "reply": reply, "hit": hit}
                )
            except _RECORDED_ERRORS as exc:
                results.append(
                    {
                        "sample_id": vq.id,
                        "entity_name": name,
                        "reply": "",
                        "hit": None,
                        "error": f"{type(exc).__name__}: {exc}",
                    }
                )
        return results
