"""Operator entry point.

`process` drives the exact same orchestrator path as channel uploads, so bank
output is byte-identical whichever door a document comes in through.

Exit codes: 0 success, 1 pipeline failure, 2 usage error.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click

from .api import build_ocr_provider, build_synth_provider, create_app
from .config import load_config
from .engagement import EngagementService
from .errors import DomainError
from .pipeline import JOB_DONE, JobRunner
from .store import Store
from .util import sha256_hex


def _store_from(config) -> Store:
    return Store(config.database_url)


@click.group()
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON config file (same keys as env vars, lowercased).")
@click.option("--db", "database_url", default=None, help="Database path or URL.")
@click.pass_context
def main(ctx, config_file, database_url):
    """Manage the question-bank engine: serve, process, seed, export, import."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = load_config(config_file, database_url=database_url)


@main.command()
@click.option("--bind", default=None, help="host:port to listen on.")
@click.pass_context
def serve(ctx, bind):
    """Run the HTTP and message-channel service."""
    import uvicorn

    config = ctx.obj["config"]
    if bind:
        config.bind_addr = bind
    app = create_app(config)
    app.state.runner.recover()
    host, _, port = config.bind_addr.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8080))


@main.command()
@click.argument("file_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--course", required=True, help="Course id or code the paper belongs to.")
@click.option("--paper-title", default=None, help="Past paper title (defaults to the file name).")
@click.option("--paper-year", type=int, default=None, help="Past paper year.")
@click.option("--provider", type=click.Choice(["local", "remote"]), default="local",
              show_default=True, help="Synthesis provider.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Also export the resulting bank to this file.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable summary on stdout.")
@click.pass_context
def process(ctx, file_path: Path, course, paper_title, paper_year, provider, out_path, as_json):
    """Run one document through the pipeline without the channel."""
    config = ctx.obj["config"]
    config.synth_provider = provider
    store = _store_from(config)
    runner = JobRunner(store, config, build_ocr_provider(config), build_synth_provider(config))

    resolved = store.get_course(course)
    if resolved is None:
        raise click.UsageError(f"unknown course {course!r}; run `paperbank seed` first?")

    data = file_path.read_bytes()
    content_type = "text/plain" if file_path.suffix.lower() == ".txt" else "application/pdf"
    started = time.perf_counter()
    document_id = store.put_document(data, file_path.name, content_type, sha256_hex(data))
    job_id = runner.submit_job(document_id, resolved.id, {
        "title": paper_title or file_path.stem,
        "year": paper_year or store.clock().year,
    })
    terminal = runner.run_job(job_id)
    seconds = time.perf_counter() - started
    status = runner.job_status(job_id)

    if terminal != JOB_DONE:
        failure = status["failure"] or {}
        click.echo(f"pipeline failed at {failure.get('stage')}: "
                   f"{failure.get('error_code')} {failure.get('message', '')}", err=True)
        sys.exit(1)

    result = status["result"]
    summary = {
        "job_id": job_id,
        "past_paper_id": result["past_paper_id"],
        "accepted": result["accepted_count"],
        "dropped": result["dropped_count"],
        "seconds": round(seconds, 3),
    }
    if out_path is not None:
        out_path.write_text(store.export_bank(result["past_paper_id"]), encoding="utf-8")
        summary["bank_file"] = str(out_path)
    if as_json:
        click.echo(json.dumps(summary))
    else:
        for key, value in summary.items():
            click.echo(f"{key}: {value}")


@main.command()
@click.option("--paper-id", required=True, help="Past paper id to export.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.pass_context
def export(ctx, paper_id, out_path: Path):
    """Write a paper's bank as a canonical interchange file."""
    store = _store_from(ctx.obj["config"])
    try:
        out_path.write_text(store.export_bank(paper_id), encoding="utf-8")
    except DomainError as exc:
        raise click.ClickException(f"{exc.code}: {exc.message}")
    click.echo(f"exported {paper_id} -> {out_path}")


@main.command(name="import")
@click.option("--file", "file_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              required=True)
@click.option("--course", required=True, help="Course id or code to import into.")
@click.pass_context
def import_bank(ctx, file_path: Path, course):
    """Import an interchange file; duplicates are skipped by fingerprint."""
    store = _store_from(ctx.obj["config"])
    resolved = store.get_course(course)
    if resolved is None:
        raise click.UsageError(f"unknown course {course!r}")
    try:
        result = store.import_bank(file_path.read_text(encoding="utf-8"), resolved.id)
    except DomainError as exc:
        raise click.ClickException(f"{exc.code}: {exc.message}")
    click.echo(f"paper: {result['past_paper_id']} inserted: {result['inserted']} "
               f"skipped: {result['skipped']}")


@main.command()
@click.option("--fixtures-dir", type=click.Path(exists=True, file_okay=False, path_type=Path),
              default=Path("fixtures"), show_default=True)
@click.pass_context
def seed(ctx, fixtures_dir: Path):
    """Load fixture institutions, courses, concepts and users."""
    store = _store_from(ctx.obj["config"])
    seed_file = fixtures_dir / "seed.json"
    if not seed_file.is_file():
        raise click.UsageError(f"no seed.json under {fixtures_dir}")
    data = json.loads(seed_file.read_text(encoding="utf-8"))
    counts = seed_store(store, data)
    for key, value in counts.items():
        click.echo(f"{key}: {value}")


def seed_store(store: Store, data: dict) -> dict:
    counts = {"institutions": 0, "courses": 0, "concepts": 0, "users": 0}
    for inst in data.get("institutions", []):
        if store.query_one("SELECT 1 FROM institutions WHERE id = ?", (inst["id"],)) is None:
            store.add_institution(inst["name"], inst.get("country_code", ""), id=inst["id"])
            counts["institutions"] += 1
    for course in data.get("courses", []):
        if store.query_one("SELECT 1 FROM courses WHERE id = ?", (course["id"],)) is None:
            store.add_course(course["code"], course.get("title", course["code"]),
                             course.get("institutions", []), id=course["id"])
            counts["courses"] += 1
    for concept in data.get("concepts", []):
        if store.query_one("SELECT 1 FROM concepts WHERE id = ?", (concept["id"],)) is None:
            store.add_concept(concept["name"], concept.get("parent_id"), id=concept["id"])
            counts["concepts"] += 1
    for user in data.get("users", []):
        if store.query_one("SELECT 1 FROM users WHERE id = ?", (user["id"],)) is None:
            store.add_user(user["role"], user.get("display_name", user["id"]),
                           user.get("institution_id"), id=user["id"])
            counts["users"] += 1
    return counts


@main.command()
@click.option("--from", "frm", default=None)
@click.option("--to", default=None)
@click.pass_context
def stats(ctx, frm, to):
    """Processing-time stats over completed jobs."""
    store = _store_from(ctx.obj["config"])
    engagement = EngagementService(store)
    click.echo(json.dumps(engagement.processing_time_stats(frm, to), indent=2))


if __name__ == "__main__":
    main()
