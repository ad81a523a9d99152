"""Command-line interface for the pseudo-labeling pipeline."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .annotation import Annotation, RttmParseError, emit_rttm, parse_rttm
from .config import ConfigError, load_config
from .fusion import FusionConfig, Hypothesis, fuse as fuse_hypotheses
from .metrics import DerReport, der
from .pipeline import InjectedCrash, Pipeline
from .protocol import run_conformance


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    """diarlab: turn raw multi-speaker videos into diarization pseudo-labels."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _pipeline(config_path: str) -> Pipeline:
    try:
        return Pipeline(load_config(Path(config_path)))
    except ConfigError as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--tag", default=None, help="Originating search term / language tag.")
@click.argument("sources", nargs=-1, required=True)
def ingest(config_path, tag, sources):
    """Bring SOURCES (local paths or URLs) under pipeline management."""
    failed = 0
    with _pipeline(config_path) as pipeline:
        for source in sources:
            entry = pipeline.ingest(source, tag=tag)
            state = entry.stage("acquire")
            click.echo(f"{entry.item_id}  acquire={state.state}"
                       + (f" ({state.reason})" if state.reason else ""))
            failed += state.state == "failed"
    sys.exit(1 if failed else 0)


def _echo_summary(summary) -> None:
    click.echo(
        f"done={summary.items_done} failed={summary.items_failed} "
        f"skipped={summary.items_skipped} stages_executed={summary.stages_executed}"
    )
    for status, count in sorted(summary.clip_status_counts.items()):
        click.echo(f"  clips {status}: {count}")
    for item_id, (stage, reason) in sorted(summary.failures.items()):
        click.echo(f"  FAILED {item_id} at {stage}: {reason}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--items", default=None, help="Comma-separated item ids (default: all).")
def run(config_path, items):
    """Run every pending stage of the pipeline."""
    selected = items.split(",") if items else None
    with _pipeline(config_path) as pipeline:
        try:
            summary = pipeline.run(selected)
        except InjectedCrash as exc:
            raise click.ClickException(str(exc))
    _echo_summary(summary)
    sys.exit(0 if summary.ok else 1)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def resume(config_path):
    """Resume an interrupted run, verifying completed artifacts by hash."""
    with _pipeline(config_path) as pipeline:
        summary = pipeline.resume()
    _echo_summary(summary)
    sys.exit(0 if summary.ok else 1)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def status(config_path, as_json):
    """Summarize pipeline state: stages, failures, gate pass rate, labeled hours."""
    with _pipeline(config_path) as pipeline:
        state = pipeline.status()
    if as_json:
        click.echo(json.dumps(state, indent=1, sort_keys=True))
        return
    if state.get("no_run"):
        click.echo("no run recorded in this workspace")
        return
    click.echo(f"items: {state['items']}")
    for stage, counts in state["stages"].items():
        pretty = " ".join(f"{k}={v}" for k, v in sorted(counts.items()))
        click.echo(f"  {stage:8s} {pretty}")
    click.echo(f"clips: " + " ".join(f"{k}={v}" for k, v in sorted(state["clip_status_counts"].items())))
    if state["gate_pass_rate"] is not None:
        click.echo(f"gate pass rate: {state['gate_pass_rate']:.1%}")
    click.echo(f"labeled hours: {state['labeled_hours']:.3f}")
    for reason, count in sorted(state["failure_histogram"].items()):
        click.echo(f"  failure x{count}: {reason}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--iteration", required=True, type=int)
def relabel(config_path, iteration):
    """Re-label with the currently configured workers; report per-item churn."""
    with _pipeline(config_path) as pipeline:
        report = pipeline.relabel_iteration(iteration)
    click.echo(json.dumps(report.to_dict(), indent=1, sort_keys=True))


@main.command()
@click.option("--ref", "ref_path", required=True, type=click.Path(exists=True))
@click.option("--hyp", "hyp_path", required=True, type=click.Path(exists=True))
@click.option("--collar", default=0.25, show_default=True)
@click.option("--no-overlap", is_flag=True, help="Exclude reference overlap regions.")
def score(ref_path, hyp_path, collar, no_overlap):
    """Score a hypothesis RTTM against a reference RTTM (pooled over recordings)."""
    try:
        refs = {a.recording_id: a for a in parse_rttm(Path(ref_path).read_text())}
        hyps = {a.recording_id: a for a in parse_rttm(Path(hyp_path).read_text())}
    except RttmParseError as exc:
        raise click.ClickException(str(exc))
    missed = fa = confusion = total = 0.0
    for recording_id, ref in sorted(refs.items()):
        hyp = hyps.get(recording_id, Annotation(recording_id))
        report = der(ref, hyp, collar=collar, score_overlap=not no_overlap)
        missed += report.missed
        fa += report.false_alarm
        confusion += report.confusion
        total += report.reference_total
    extra = {a for a in hyps if a not in refs}
    if extra:
        raise click.ClickException(f"hypothesis recordings missing from reference: {sorted(extra)}")
    errors = missed + fa + confusion
    value = errors / total if total > 0 else (0.0 if errors == 0 else float("inf"))
    pooled = DerReport(missed, fa, confusion, total, value, degenerate=total == 0)
    click.echo(
        f"DER {pooled.der:.2%} (missed {pooled.missed:.3f}s, false alarm "
        f"{pooled.false_alarm:.3f}s, confusion {pooled.confusion:.3f}s, "
        f"reference {pooled.reference_total:.3f}s, collar {collar:g}s, "
        f"overlap {'excluded' if no_overlap else 'scored'})"
    )
    click.echo(pooled.as_kv())


@main.command(name="fuse")
@click.option("--hyp", "hyp_paths", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--ranks", default=None, help="Comma-separated ranks, one per --hyp (default 1,2,3...).")
@click.option("--exponent", default=0.5, show_default=True, help="Rank weighting exponent.")
@click.option("-o", "--output", default=None, type=click.Path(), help="Write fused RTTM here.")
def fuse_cmd(hyp_paths, ranks, exponent, output):
    """Fuse two or more diarization hypothesis RTTM files by weighted voting."""
    if ranks:
        rank_list = [int(r) for r in ranks.split(",")]
        if len(rank_list) != len(hyp_paths):
            raise click.ClickException(
                f"got {len(rank_list)} ranks for {len(hyp_paths)} hypotheses"
            )
    else:
        rank_list = list(range(1, len(hyp_paths) + 1))
    try:
        parsed = [parse_rttm(Path(p).read_text()) for p in hyp_paths]
    except RttmParseError as exc:
        raise click.ClickException(str(exc))
    by_recording: list[dict[str, Annotation]] = [
        {a.recording_id: a for a in annotations} for annotations in parsed
    ]
    recordings = set(by_recording[0])
    for mapping in by_recording[1:]:
        if set(mapping) != recordings:
            raise click.ClickException("hypothesis files cover different recordings")
    config = FusionConfig(rank_exponent=exponent)
    fused = []
    for recording_id in sorted(recordings):
        hypotheses = [
            Hypothesis(source=f"h{i + 1}", annotation=m[recording_id], rank=rank_list[i])
            for i, m in enumerate(by_recording)
        ]
        hypotheses.sort(key=lambda h: (h.rank, h.source))
        fused.append(fuse_hypotheses(hypotheses, config))
    text = emit_rttm(fused)
    if output:
        Path(output).write_text(text, encoding="utf-8")
        click.echo(f"wrote {output}")
    else:
        click.echo(text, nl=False)


@main.command(name="gate-report")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def gate_report(config_path):
    """Per-clip gate verdict table plus aggregate pass rates."""
    with _pipeline(config_path) as pipeline:
        entries = pipeline.manifest.entries
    rows = []
    for entry in sorted(entries.values(), key=lambda e: e.item_id):
        for clip in sorted(entry.clips.values(), key=lambda c: c.clip_id):
            if clip.verdict is None:
                rows.append((clip.clip_id, clip.status, "-", ""))
                continue
            failing = ",".join(
                r["name"] for r in clip.verdict["reasons"] if not r["passed"]
            )
            rows.append(
                (clip.clip_id, clip.status, "pass" if clip.verdict["passed"] else "FAIL", failing)
            )
    if not rows:
        click.echo("no clips recorded")
        return
    width = max(len(r[0]) for r in rows)
    click.echo(f"{'clip':{width}s}  {'status':15s} {'gate':5s} failing_checks")
    for clip_id, status_, gate, failing in rows:
        click.echo(f"{clip_id:{width}s}  {status_:15s} {gate:5s} {failing}")
    judged = [r for r in rows if r[2] != "-"]
    passed = sum(1 for r in judged if r[2] == "pass")
    if judged:
        click.echo(f"pass rate: {passed}/{len(judged)} = {passed / len(judged):.1%}")


@main.command(name="protocol-check")
@click.option("--workspace", default=".", type=click.Path(exists=True, file_okay=False))
@click.option("--timeout", default=30.0, show_default=True)
@click.argument("worker_cmd", nargs=-1, required=True)
def protocol_check(workspace, timeout, worker_cmd):
    """Run the scorer-protocol conformance transcript against WORKER_CMD."""
    checks = run_conformance(list(worker_cmd), Path(workspace), timeout=timeout)
    failed = 0
    for check in checks:
        mark = "PASS" if check.passed else "FAIL"
        click.echo(f"[{mark}] {check.name}: {check.detail}")
        failed += not check.passed
    click.echo(f"{len(checks) - failed}/{len(checks)} checks passed")
    sys.exit(1 if failed else 0)


@main.command(name="make-fixtures")
@click.argument("directory", type=click.Path())
@click.option("--seed", default=7, show_default=True)
def make_fixtures(directory, seed):
    """Build the bundled synthetic demo corpus (sources, truth, mock fixtures)."""
    from .fixtures import build_corpus

    layout = build_corpus(Path(directory), seed=seed)
    click.echo(f"sources:   {len(layout.sources)}")
    click.echo(f"items:     {', '.join(layout.item_ids)}")
    for profile, path in layout.configs.items():
        click.echo(f"config[{profile}]: {path}")


if __name__ == "__main__":
    main()
