"""Pipeline orchestration over a reproducible run directory.

Stages write their artifacts under one run directory and are resumable and
idempotent: a stage refuses to run before its prerequisites exist, skips work
whose outputs are already present, and never rewrites earlier-stage files.
The resolved configuration is serialized to ``config.json`` before anything
executes; re-invoking with a different configuration against the same run
directory is an error.

Layout::

    run/
      config.json            resolved RunConfig (canonical JSON)
      llm_log.jsonl          every request/response pair, with step tags
      llm_cache.jsonl        response cache (re-runs do not re-bill)
      ingest/dataset.jsonl   normalized dataset copy
      ingest/splits.json     session ids per split
      embed/embeddings.bin   embedding cache (binary, append-only)
      retrieve/neighbors.json  test session id -> ranked train neighbors
      demo/demo_<sid>.json   one demonstration per neighbor session
      infer/result_<sid>.json, infer/manifest.json
      eval/report.json, eval/report.txt

Exit codes: 0 success, 2 usage, 3 missing prerequisite/lock/config mismatch,
4 dataset validation, 5 provider or model-output failure, 1 unexpected.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import prompts
from .dataset import (
    GroundTruth,
    Session,
    SplitDataset,
    chronological_split,
    load_dataset,
    save_dataset,
)
from .demo import Demonstration, DemonstrationBuilder, LoopConfig, RaterPanel
from .errors import (
    AnswerFormatError,
    BundlegenError,
    DatasetError,
    ProviderError,
    RatingError,
    RetrievalError,
    StageError,
)
from .evaluate import evaluate
from .infer import InferenceMode, SessionResult, assemble_context, build_ideal_transcript, infer_target
from .llm import (
    LlmClient,
    MockProvider,
    MockScript,
    ProviderConfig,
    RateLimiter,
    RemoteChatProvider,
    ReplayProvider,
    ResponseCache,
    RunLog,
)
from .retrieval import (
    EmbeddingCache,
    HashEmbedder,
    RemoteEmbedder,
    RetrievalConfig,
    build_descriptions,
    embed_sessions,
    load_stopwords,
    session_description,
    top_k_neighbors,
)

logger = logging.getLogger(__name__)

EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_STAGE = 3
EXIT_DATA = 4
EXIT_PROVIDER = 5

_MODE_ALIASES = {"dicl": "dicl", "few-shot": "few_shot_random", "zero-shot": "zero_shot"}


@dataclass(frozen=True)
class EmbedderConfig:
    """Parameters for whichever embedding provider retrieval selects."""

    dim: int = 384  # hash provider
    base_url: str | None = None  # remote provider

    def to_dict(self) -> dict:
        return {"dim": self.dim, "base_url": self.base_url}

    @classmethod
    def from_dict(cls, data: dict) -> "EmbedderConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(frozen=True)
class RunConfig:
    dataset: str = ""
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0
    workers: int = 1
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    loops: LoopConfig = field(default_factory=LoopConfig)
    mode: InferenceMode = field(default_factory=InferenceMode)
    generator: ProviderConfig = field(default_factory=ProviderConfig)
    rater1: ProviderConfig = field(default_factory=ProviderConfig)
    rater2: ProviderConfig = field(default_factory=ProviderConfig)
    dedup_hits: bool = False

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "ratios": list(self.ratios),
            "seed": self.seed,
            "workers": self.workers,
            "retrieval": {"k": self.retrieval.k, "provider": self.retrieval.provider},
            "embedder": self.embedder.to_dict(),
            "loops": self.loops.to_dict(),
            "mode": self.mode.to_dict(),
            "generator": self.generator.to_dict(),
            "rater1": self.rater1.to_dict(),
            "rater2": self.rater2.to_dict(),
            "dedup_hits": self.dedup_hits,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return cls(
            dataset=data.get("dataset", ""),
            ratios=tuple(data.get("ratios", (0.7, 0.1, 0.2))),
            seed=data.get("seed", 0),
            workers=data.get("workers", 1),
            retrieval=RetrievalConfig(**data.get("retrieval", {})),
            embedder=EmbedderConfig.from_dict(data.get("embedder", {})),
            loops=LoopConfig.from_dict(data.get("loops", {})),
            mode=InferenceMode.from_dict(data.get("mode", {})),
            generator=ProviderConfig.from_dict(data.get("generator", {})),
            rater1=ProviderConfig.from_dict(data.get("rater1", {})),
            rater2=ProviderConfig.from_dict(data.get("rater2", {})),
            dedup_hits=data.get("dedup_hits", False),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


# -- run-directory plumbing ---------------------------------------------------


@contextmanager
def run_lock(run_dir: Path):
    """One writer per run directory, enforced with an exclusive lock file."""
    run_dir.mkdir(parents=True, exist_ok=True)
    lock_path = run_dir / ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageError(f"run directory is locked by another writer: {lock_path}") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def _store_or_check_config(config: RunConfig, run_dir: Path) -> None:
    stored_path = run_dir / "config.json"
    canonical = config.canonical_json()
    if stored_path.exists():
        if stored_path.read_text("utf-8") != canonical:
            raise StageError(
                f"configuration differs from the one recorded in {stored_path}; "
                "use a fresh run directory for a different configuration"
            )
    else:
        stored_path.write_text(canonical, "utf-8")


def _require_artifact(path: Path, producer: str) -> Path:
    if not path.exists():
        raise StageError(f"missing {path.name}; run '{producer}' first")
    return path


def _make_client(
    provider_config: ProviderConfig,
    run_dir: Path,
    name: str,
    limiter: RateLimiter,
) -> LlmClient:
    if provider_config.kind == "mock":
        if not provider_config.script_path:
            raise StageError(f"{name}: mock provider needs a script path (--mock-script)")
        provider = MockProvider(MockScript.from_file(provider_config.script_path), provider_config)
    elif provider_config.kind == "remote-chat":
        provider = RemoteChatProvider(provider_config)
    elif provider_config.kind == "replay":
        if not provider_config.log_path:
            raise StageError(f"{name}: replay provider needs a log path")
        provider = ReplayProvider(provider_config.log_path, provider_config)
    else:
        raise StageError(f"{name}: unknown provider kind {provider_config.kind!r}")
    return LlmClient(
        provider,
        run_log=RunLog(run_dir / "llm_log.jsonl"),
        cache=ResponseCache(run_dir / "llm_cache.jsonl"),
        limiter=limiter,
        name=name,
    )


def _make_embedder(config: RunConfig):
    selector = config.retrieval.provider
    if selector == "hash":
        return HashEmbedder(dim=config.embedder.dim)
    if selector == "remote":
        base_url = config.embedder.base_url or os.environ.get("BUNDLEGEN_EMBED_URL")
        if not base_url:
            raise StageError("remote embedder needs embedder.base_url or BUNDLEGEN_EMBED_URL")
        return RemoteEmbedder(base_url)
    raise StageError(f"unknown embedding provider {selector!r}")


def _load_split(config: RunConfig, run_dir: Path) -> SplitDataset:
    dataset_path = _require_artifact(run_dir / "ingest" / "dataset.jsonl", "ingest")
    splits_path = _require_artifact(run_dir / "ingest" / "splits.json", "ingest")
    sessions, catalog, ground_truth = load_dataset(dataset_path)
    by_id = {s.session_id: s for s in sessions}
    splits = json.loads(splits_path.read_text("utf-8"))
    return SplitDataset(
        train=tuple(by_id[sid] for sid in splits["train"]),
        validation=tuple(by_id[sid] for sid in splits["validation"]),
        test=tuple(by_id[sid] for sid in splits["test"]),
        catalog=catalog,
        ground_truth=ground_truth,
    )


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", "utf-8")


# -- stages -------------------------------------------------------------------


def cmd_ingest(config: RunConfig, run_dir: Path) -> SplitDataset:
    if not config.dataset:
        raise StageError("no dataset path configured (--dataset or config file)")
    sessions, catalog, ground_truth = load_dataset(config.dataset)
    split = chronological_split(sessions, config.ratios, catalog=catalog, ground_truth=ground_truth)

    out = run_dir / "ingest"
    out.mkdir(parents=True, exist_ok=True)
    ordered = list(split.train) + list(split.validation) + list(split.test)
    save_dataset(out / "dataset.jsonl", ordered, catalog, ground_truth)
    _write_json(
        out / "splits.json",
        {
            "train": [s.session_id for s in split.train],
            "validation": [s.session_id for s in split.validation],
            "test": [s.session_id for s in split.test],
        },
    )
    logger.info(
        "ingested %d sessions (train=%d validation=%d test=%d)",
        len(ordered), len(split.train), len(split.validation), len(split.test),
    )
    return split


def cmd_embed(config: RunConfig, run_dir: Path) -> int:
    split = _load_split(config, run_dir)
    out = run_dir / "embed"
    out.mkdir(parents=True, exist_ok=True)
    cache = EmbeddingCache(out / "embeddings.bin")
    provider = _make_embedder(config)
    stopwords = load_stopwords()
    descriptions = build_descriptions(split.catalog, stopwords)
    texts = [
        session_description(s, descriptions)
        for s in (*split.train, *split.validation, *split.test)
    ]
    embed_sessions(texts, provider, cache)
    logger.info("embedded %d session descriptions (cache size %d)", len(texts), len(cache))
    return len(texts)


def cmd_retrieve(config: RunConfig, run_dir: Path) -> dict[str, list]:
    split = _load_split(config, run_dir)
    _require_artifact(run_dir / "embed" / "embeddings.bin", "embed")
    cache = EmbeddingCache(run_dir / "embed" / "embeddings.bin")
    provider = _make_embedder(config)
    stopwords = load_stopwords()
    descriptions = build_descriptions(split.catalog, stopwords)

    # Demonstrations need labels, so only labeled training sessions qualify
    # as neighbor candidates.
    corpus_sessions = [s for s in split.train if split.ground_truth.get(s.session_id)]
    if not corpus_sessions and config.mode.mode == "dicl":
        raise StageError("no labeled training sessions to retrieve neighbors from")

    neighbors: dict[str, list] = {}
    if config.mode.mode == "dicl" and config.mode.use_top_neighbor:
        corpus = embed_sessions(
            [session_description(s, descriptions) for s in corpus_sessions], provider, cache
        )
        queries = embed_sessions(
            [session_description(s, descriptions) for s in split.test], provider, cache
        )
        for session, query in zip(split.test, queries):
            ranked = top_k_neighbors(query, corpus, config.retrieval.k)
            neighbors[session.session_id] = [[sid, score] for sid, score in ranked]
    elif config.mode.mode == "dicl":
        rng = random.Random(config.seed)
        ids = [s.session_id for s in corpus_sessions]
        for session in split.test:
            picks = [rng.choice(ids) for _ in range(config.retrieval.k)]
            neighbors[session.session_id] = [[sid, 0.0] for sid in picks]
    else:
        neighbors = {s.session_id: [] for s in split.test}

    out = run_dir / "retrieve"
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "neighbors.json", neighbors)
    return neighbors


def cmd_demo(config: RunConfig, run_dir: Path) -> list[str]:
    neighbors_path = _require_artifact(run_dir / "retrieve" / "neighbors.json", "retrieve")
    out = run_dir / "demo"
    out.mkdir(parents=True, exist_ok=True)
    if config.mode.mode != "dicl":
        logger.info("mode %s builds no demonstrations", config.mode.mode)
        return []

    split = _load_split(config, run_dir)
    neighbors = json.loads(neighbors_path.read_text("utf-8"))
    wanted = sorted({sid for ranked in neighbors.values() for sid, _score in ranked})
    pending = [sid for sid in wanted if not (out / f"demo_{sid}.json").exists()]
    if not pending:
        return wanted

    limiter = RateLimiter(config.generator.rpm)
    generator = _make_client(config.generator, run_dir, "generator", limiter)
    panel = RaterPanel(
        raters=(
            _make_client(config.rater1, run_dir, "rater1", limiter),
            _make_client(config.rater2, run_dir, "rater2", limiter),
        )
    )
    builder = DemonstrationBuilder(generator, panel, config.loops)
    by_id = {s.session_id: s for s in split.train + split.validation + split.test}

    def build_one(sid: str) -> None:
        demonstration = builder.build(by_id[sid], split.ground_truth.get(sid), split.catalog)
        _write_json(out / f"demo_{sid}.json", demonstration.to_dict())

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            list(pool.map(build_one, pending))
    else:
        for sid in pending:
            build_one(sid)
    logger.info("built %d demonstrations (%d already present)", len(pending), len(wanted) - len(pending))
    return wanted


def cmd_infer(config: RunConfig, run_dir: Path) -> list[str]:
    split = _load_split(config, run_dir)
    neighbors_path = _require_artifact(run_dir / "retrieve" / "neighbors.json", "retrieve")
    if config.mode.mode == "dicl":
        _require_artifact(run_dir / "demo", "demo")
    neighbors = json.loads(neighbors_path.read_text("utf-8"))
    out = run_dir / "infer"
    out.mkdir(parents=True, exist_ok=True)

    limiter = RateLimiter(config.generator.rpm)
    client = _make_client(config.generator, run_dir, "generator", limiter)
    rng = random.Random(config.seed)
    labeled_train = [s for s in split.train if split.ground_truth.get(s.session_id)]

    # Context construction stays sequential so seeded few-shot sampling is
    # reproducible; only the chat exchanges fan out to workers.
    jobs: list[tuple[Session, list[Demonstration], list[str]]] = []
    for session in split.test:
        demonstrations: list[Demonstration] = []
        sources: list[str] = []
        if config.mode.mode == "dicl":
            for sid, _score in neighbors.get(session.session_id, []):
                demo_path = _require_artifact(out.parent / "demo" / f"demo_{sid}.json", "demo")
                demonstrations.append(Demonstration.from_dict(json.loads(demo_path.read_text("utf-8"))))
                sources.append(sid)
        elif config.mode.mode == "few_shot_random":
            if not labeled_train:
                raise StageError("few-shot mode needs labeled training sessions")
            example = rng.choice(labeled_train)
            demonstrations.append(
                build_ideal_transcript(example, split.ground_truth[example.session_id], split.catalog)
            )
            sources.append(example.session_id)
        jobs.append((session, demonstrations, sources))

    def infer_one(job: tuple[Session, list[Demonstration], list[str]]) -> str:
        session, demonstrations, sources = job
        path = out / f"result_{session.session_id}.json"
        if path.exists():
            return path.name
        context = assemble_context(demonstrations, config.mode)
        result = infer_target(
            session, context, client, config.mode, split.catalog, source_demonstrations=sources
        )
        _write_json(path, result.to_dict())
        return path.name

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            files = list(pool.map(infer_one, jobs))
    else:
        files = [infer_one(job) for job in jobs]

    manifest = {
        "config_sha": hashlib.sha256(config.canonical_json().encode("utf-8")).hexdigest(),
        "mode": config.mode.to_dict(),
        "provider": config.generator.kind,
        "splits": {
            "train": len(split.train),
            "validation": len(split.validation),
            "test": len(split.test),
        },
        "results": files,
    }
    _write_json(out / "manifest.json", manifest)
    return files


def cmd_eval(config: RunConfig, run_dir: Path):
    split = _load_split(config, run_dir)
    manifest_path = _require_artifact(run_dir / "infer" / "manifest.json", "infer")
    manifest = json.loads(manifest_path.read_text("utf-8"))
    results = []
    for name in manifest["results"]:
        payload = json.loads((run_dir / "infer" / name).read_text("utf-8"))
        results.append(SessionResult.from_dict(payload))
    report = evaluate(results, split.ground_truth, dedup_hits=config.dedup_hits)
    out = run_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report.to_dict())
    (out / "report.txt").write_text(report.table() + "\n", "utf-8")
    return report


def cmd_report(run_dirs: Sequence[Path]) -> str:
    rows = [f"{'run':<32}{'precision':>10}{'recall':>10}{'coverage':>10}{'hits':>7}"]
    for run_dir in run_dirs:
        report_path = _require_artifact(run_dir / "eval" / "report.json", "eval")
        data = json.loads(report_path.read_text("utf-8"))
        rows.append(
            f"{run_dir.name:<32}"
            f"{data['precision']:>10.4f}{data['recall']:>10.4f}{data['coverage']:>10.4f}"
            f"{data['hit_bundle_count']:>7d}"
        )
    return "\n".join(rows)


# -- argument handling ----------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bundlegen",
        description="Bundle generation and intent inference from user sessions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("ingest", "load, validate, and split the dataset"),
        ("embed", "embed session descriptions into the cache"),
        ("retrieve", "rank training neighbors for every test session"),
        ("demo", "build demonstrations on retrieved neighbors"),
        ("infer", "run both tasks on every test session"),
        ("eval", "compute precision, recall, and coverage"),
        ("report", "consolidate reports across runs"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--run-dir", required=True, action="append", type=Path,
                       help="run directory (repeatable for 'report')")
        if name == "report":
            continue
        p.add_argument("--config", type=Path, help="JSON RunConfig file")
        p.add_argument("--dataset", help="dataset path (overrides config)")
        p.add_argument("--workers", type=int, help="parallel sessions per stage")
        p.add_argument("--mode", choices=sorted(_MODE_ALIASES), help="inference mode")
        p.add_argument("--k", type=int, help="neighbor count")
        p.add_argument("--ts", type=int, help="max self-correction rounds")
        p.add_argument("--tb", type=int, help="max bundle-feedback rounds")
        p.add_argument("--ti", type=int, help="max intent-feedback rounds")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--provider", choices=["mock", "remote"],
                       help="chat backend for generator and raters")
        p.add_argument("--mock-script", type=Path, help="mock script JSON file")
        p.add_argument("--dedup-hits", action="store_true", default=None,
                       help="credit each ground-truth bundle at most once")
    return parser


def resolve_config(args: argparse.Namespace, run_dir: Path) -> RunConfig:
    stored_path = run_dir / "config.json"
    if args.config is not None:
        base = RunConfig.from_dict(json.loads(Path(args.config).read_text("utf-8")))
    elif stored_path.exists():
        base = RunConfig.from_dict(json.loads(stored_path.read_text("utf-8")))
    else:
        base = RunConfig()

    data = base.to_dict()
    if args.dataset is not None:
        data["dataset"] = args.dataset
    if args.workers is not None:
        data["workers"] = args.workers
    if args.seed is not None:
        data["seed"] = args.seed
    if args.mode is not None:
        data["mode"]["mode"] = _MODE_ALIASES[args.mode]
    if args.k is not None:
        data["mode"]["k"] = args.k
        data["retrieval"]["k"] = args.k
    if args.ts is not None:
        data["loops"]["self_correct_rounds"] = args.ts
    if args.tb is not None:
        data["loops"]["bundle_feedback_rounds"] = args.tb
    if args.ti is not None:
        data["loops"]["intent_feedback_rounds"] = args.ti
    if args.dedup_hits is not None:
        data["dedup_hits"] = args.dedup_hits
    if args.provider == "mock":
        script = str(args.mock_script) if args.mock_script else None
        for key in ("generator", "rater1", "rater2"):
            data[key] = ProviderConfig(kind="mock", script_path=script).to_dict()
    elif args.provider == "remote":
        model = os.environ.get("BUNDLEGEN_MODEL", "")
        for key in ("generator", "rater1", "rater2"):
            data[key] = ProviderConfig(kind="remote-chat", model=model).to_dict()
    return RunConfig.from_dict(data)


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("BUNDLEGEN_LOG", "INFO"),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    run_dirs = [Path(p) for p in args.run_dir]

    try:
        if args.command == "report":
            print(cmd_report(run_dirs))
            return 0
        run_dir = run_dirs[0]
        with run_lock(run_dir):
            config = resolve_config(args, run_dir)
            _store_or_check_config(config, run_dir)
            if args.command == "ingest":
                cmd_ingest(config, run_dir)
            elif args.command == "embed":
                cmd_embed(config, run_dir)
            elif args.command == "retrieve":
                cmd_retrieve(config, run_dir)
            elif args.command == "demo":
                cmd_demo(config, run_dir)
            elif args.command == "infer":
                cmd_infer(config, run_dir)
            elif args.command == "eval":
                report = cmd_eval(config, run_dir)
                print(report.table())
        return 0
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ProviderError, AnswerFormatError, RatingError, RetrievalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except BundlegenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
