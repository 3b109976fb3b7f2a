"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 domain rejection
(foreign-key cycles), 3 missing input, 4 provider failure.
"""

from __future__ import annotations

import json
import logging
import sys
import time
import uuid
from pathlib import Path
from typing import Any, Sequence

import click

from . import __version__
from .config import ClientFactory, RunConfig, load_config, make_embedder
from .dataset_builder import BuildClients, DebugClients, build_dataset, load_seeds
from .engine import execute_query, load_database, load_databases, write_database
from .engine.database import RUN_MANIFEST
from .errors import (
    ConfigError,
    CycleError,
    DatabaseIoError,
    EmptyLibrary,
    MissingDatabase,
    ProviderError,
    Text2NoSQLError,
    UnknownCollection,
)
from .metrics import evaluate_corpus, merge_predictions, read_jsonl
from .query import parse_query
from .retrieval import ExampleRecord, VectorLibrary, build_vector_library
from .smart import SmartClients, SmartConfig, provider_failed, run_smart
from .transform import load_dump, transform_database

EXIT_OK, EXIT_USAGE, EXIT_REJECTED, EXIT_MISSING, EXIT_PROVIDER = 0, 1, 2, 3, 4

log = logging.getLogger("text2nosql")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, CycleError):
        return EXIT_REJECTED
    if isinstance(exc, (MissingDatabase, UnknownCollection, DatabaseIoError, EmptyLibrary, FileNotFoundError)):
        return EXIT_MISSING
    if isinstance(exc, ProviderError):
        return EXIT_PROVIDER
    return EXIT_USAGE


# -- shared plumbing --------------------------------------------------------------------------


class Run:
    """Resolved config plus the run-stamped directory this invocation writes to."""

    def __init__(self, command: str, cfg: RunConfig, run_id: str | None, args: dict[str, Any]):
        self.command = command
        self.cfg = cfg
        self.run_id = run_id or time.strftime("%Y%m%dT%H%M%S") + "-" + uuid.uuid4().hex[:6]
        self.args = args
        self.dir = Path(cfg.output) / f"{command}-{self.run_id}"

    def write_manifest(self, where: Path | None = None, **extra) -> Path:
        where = where or self.dir
        where.mkdir(parents=True, exist_ok=True)
        blob = {"command": self.command, "run_id": self.run_id, "version": __version__,
                "args": self.args, "config": self.cfg.to_json(), **extra}
        path = where / RUN_MANIFEST
        path.write_text(json.dumps(blob, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return path


def config_options(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML run configuration."),
        click.option("--output", help="Root directory for run outputs."),
        click.option("--run-id", help="Fix the run stamp (reuse one to resume a run)."),
        click.option("--k", type=int, help="Number of retrieved examples."),
        click.option("--w-nlq", type=float, help="Weight of the question channel."),
        click.option("--w-other", type=float, help="Weight of each other channel."),
        click.option("--temperature", type=float),
        click.option("--concurrency", type=int, help="Cap on parallel examples and in-flight requests."),
        click.option("--embedder-seed", type=int),
        click.option("--script", type=click.Path(dir_okay=False),
                     help="Scripted replies file; replaces every chat provider."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def make_run(command: str, kw: dict[str, Any], **overrides) -> tuple[Run, ClientFactory]:
    keys = ("output", "k", "w_nlq", "w_other", "temperature", "concurrency", "embedder_seed")
    cfg = load_config(kw.pop("config_path"), dict({k: kw.pop(k) for k in keys}, **overrides))
    script, run_id = kw.pop("script"), kw.pop("run_id")
    args = dict(kw, script=script)
    return Run(command, cfg, run_id, args), ClientFactory(cfg, script)


def need(value: str | None, what: str) -> str:
    if not value:
        raise ConfigError(f"no {what} given (flag or config file)")
    return value


def echo_json(value: Any) -> None:
    click.echo(json.dumps(value, ensure_ascii=False, indent=2))


# -- commands ---------------------------------------------------------------------------------


@click.group()
@click.version_option(__version__, prog_name="text2nosql")
@click.option("-v", "--verbose", count=True, help="More logging (-v info, -vv debug).")
def cli(verbose: int):
    """Text-to-NoSQL toolkit."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@cli.command("transform-db")
@click.argument("dump", type=click.Path(dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
def transform_db(dump: str, out_dir: str, config_path: str | None):
    """Turn a relational dump (JSON or SQLite) into a document bundle under OUT_DIR/<name>."""
    cfg = load_config(config_path)
    warnings: list = []
    db = transform_database(load_dump(dump), warnings)
    bundle = write_database(db, Path(out_dir) / db.name)
    Run("transform-db", cfg, None, {"dump": dump, "out_dir": out_dir}).write_manifest(
        Path(out_dir), database=db.name, collections=sorted(db.collections),
        warnings=[str(w) for w in warnings])
    for w in warnings:
        click.echo(f"warning: dangling foreign key: {w}", err=True)
    click.echo(f"wrote {len(db.collections)} collections to {bundle}")
    return EXIT_OK


@cli.command("exec")
@click.argument("bundle", type=click.Path())
@click.argument("query", required=False)
@click.option("--file", "query_file", type=click.Path(dir_okay=False), help="Read the query from a file.")
@click.option("--lenient", is_flag=True, help="Treat unknown collections as empty.")
def exec_cmd(bundle: str, query: str | None, query_file: str | None, lenient: bool):
    """Run QUERY against the database BUNDLE and print the result documents as JSON."""
    if (query is None) == (query_file is None):
        raise click.UsageError("give exactly one of QUERY or --file")
    text = query if query is not None else Path(query_file).read_text(encoding="utf-8")
    db = load_database(bundle)
    result = execute_query(db, parse_query(text), strict=not lenient)
    echo_json(result.docs)
    return EXIT_OK


@cli.command("eval")
@click.argument("gold", type=click.Path(dir_okay=False))
@click.argument("pred", type=click.Path(dir_okay=False))
@click.option("--dbs", help="Directory of database bundles.")
@click.option("--no-normalize", is_flag=True, help="Compare accumulator and lookup names as written.")
@config_options
def eval_cmd(gold: str, pred: str, dbs: str | None, no_normalize: bool, **kw):
    """Score predictions in PRED against the gold JSON lines in GOLD."""
    run, _ = make_run("eval", dict(kw, gold=gold, pred=pred, no_normalize=no_normalize), databases=dbs)
    databases = load_databases(need(run.cfg.databases, "database directory"))
    pairs = merge_predictions(read_jsonl(gold), pred)
    report = evaluate_corpus(pairs, databases, normalize=not no_normalize, workers=run.cfg.concurrency)
    run.dir.mkdir(parents=True, exist_ok=True)
    report.write_json(run.dir / "report.json")
    report.write_csv(run.dir / "report.csv")
    run.write_manifest()
    click.echo(report.summary())
    click.echo(f"report written to {run.dir}")
    return EXIT_OK


@cli.command("build-index")
@click.argument("training", type=click.Path(dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Library file (default: in the run dir).")
@click.option("--batch-size", type=int, default=64, show_default=True)
@config_options
def build_index(training: str, out_path: str | None, batch_size: int, **kw):
    """Embed the training examples in TRAINING into a vector library."""
    run, _ = make_run("build-index", dict(kw, training=training, out=out_path, batch_size=batch_size))
    records = [ExampleRecord.from_json(r) for r in read_jsonl(training)]
    embedder = make_embedder(run.cfg)
    run.dir.mkdir(parents=True, exist_ok=True)
    target = Path(out_path or run.cfg.library or run.dir / "library.t2nv")
    target.parent.mkdir(parents=True, exist_ok=True)
    lib = build_vector_library(records, embedder, batch_size=batch_size, max_in_flight=run.cfg.concurrency,
                               checkpoint=run.dir / "checkpoint.t2nv")
    lib.save(target)
    run.write_manifest(library=str(target), records=len(lib), embedder=embedder.tag)
    click.echo(f"indexed {len(lib)} examples into {target}")
    return EXIT_OK


@cli.command("smart-run")
@click.argument("test_set", type=click.Path(dir_okay=False))
@click.option("--dbs", help="Directory of database bundles.")
@click.option("--library", help="Vector library built by build-index.")
@click.option("--resume/--no-resume", default=True, show_default=True)
@config_options
def smart_run(test_set: str, dbs: str | None, library: str | None, resume: bool, **kw):
    """Run the four-stage generation pipeline over TEST_SET."""
    run, factory = make_run("smart-run", dict(kw, test_set=test_set, resume=resume), databases=dbs, library=library)
    examples = read_jsonl(test_set)
    databases = load_databases(need(run.cfg.databases, "database directory"))
    lib = VectorLibrary.load(need(run.cfg.library, "vector library"))
    embedder = make_embedder(run.cfg)
    if lib.provider_tag != embedder.tag:
        raise ConfigError(f"library was built with {lib.provider_tag!r} but the configured embedder is "
                          f"{embedder.tag!r}")
    clients = SmartClients(factory.role("schema"), factory.role("generator"), factory.role("refiner"),
                           factory.role("optimizer"))
    scfg = SmartConfig(run.cfg.weights, run.cfg.k, run.cfg.excerpt_size, run.cfg.concurrency)
    run.write_manifest()
    traces = run_smart(examples, databases, lib, clients, embedder, scfg, out_dir=run.dir, resume=resume)
    ok = sum(t.status == "ok" for t in traces)
    click.echo(f"{ok}/{len(traces)} examples produced a final query; traces in {run.dir / 'traces.jsonl'}")
    outages = [t.id for t in traces if provider_failed(t)]
    if outages:
        click.echo(f"provider failures on: {', '.join(outages)} (rerun with --run-id {run.run_id})", err=True)
        return EXIT_PROVIDER
    return EXIT_OK


@cli.command("dataset-build")
@click.argument("seeds", type=click.Path(dir_okay=False))
@click.option("--dbs", help="Directory of database bundles.")
@click.option("--demo", type=click.Path(dir_okay=False), help="JSON list of demonstration chat messages.")
@click.option("--questions", type=int, help="Extra questions per verified query.")
@config_options
def dataset_build(seeds: str, dbs: str | None, demo: str | None, questions: int | None, **kw):
    """Generate, verify and extend queries for the seed bundle SEEDS."""
    run, factory = make_run("dataset-build", dict(kw, seeds=seeds, demo=demo), databases=dbs,
                            questions_per_query=questions)
    seed_list = load_seeds(seeds)
    databases = load_databases(need(run.cfg.databases, "database directory"))
    cot = None
    if demo is not None:
        cot = json.loads(Path(demo).read_text(encoding="utf-8"))
        if not isinstance(cot, list) or not all(isinstance(m, dict) and {"role", "content"} <= set(m) for m in cot):
            raise ConfigError(f"{demo} must be a JSON list of {{role, content}} messages")
    clients = BuildClients(
        generator=factory.role("candidate"),
        debug=DebugClients(factory.role("debug"), factory.role("escalation"), factory.role("inspector")),
        extenders=factory.extenders(),
    )
    run.write_manifest()
    bundle = build_dataset(seed_list, databases, clients, run.dir, cot, run.cfg.questions_per_query,
                           workers=run.cfg.concurrency)
    click.echo(f"{len(bundle.records)} records, {len(bundle.rejections)} rejections; output in {run.dir}")
    stalled = [r["id"] for r in bundle.rejections if str(r["reason"]).startswith(ProviderError.__name__)]
    if stalled:
        click.echo(f"provider failures on seeds: {', '.join(stalled)} (rerun with --run-id {run.run_id})", err=True)
        return EXIT_PROVIDER
    return EXIT_OK


# -- entry points -----------------------------------------------------------------------------


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return its exit code instead of exiting."""
    try:
        rv = cli.main(args=list(argv) if argv is not None else None, prog_name="text2nosql",
                      standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except CycleError as exc:
        click.echo(f"error: {exc}", err=True)
        for cycle in exc.cycles:
            click.echo("cycle: " + " -> ".join(cycle + cycle[:1]), err=True)
        return EXIT_REJECTED
    except (Text2NoSQLError, OSError, ValueError) as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return exit_code_for(exc)
    return rv if isinstance(rv, int) else EXIT_OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
