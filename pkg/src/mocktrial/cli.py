"""Command-line entry point: ingest, simulate, evaluate-judgment, aggregate-annotations, make-pairs."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .domain import CaseMaterials, dump_case, load_case, validate_case
from .errors import AlignmentError, ExtractionIncomplete, InvalidCase, MissingAnnotation, MockTrialError
from .orchestrator import ConfigError, build_backend, load_run_config, simulate

EXIT_OK, EXIT_PARTIAL, EXIT_INPUT = 0, 1, 2


def _fail(msg: str) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(EXIT_INPUT)


def _collect_case_files(paths) -> list[Path]:
    out: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob("*.json")))
        else:
            out.append(p)
    return out


def _load_cases(paths) -> list[CaseMaterials]:
    cases = []
    for p in _collect_case_files(paths):
        try:
            case = load_case(p)
        except (OSError, ValueError) as exc:
            _fail(f"{p}: {exc}")
        problems = validate_case(case)
        if problems:
            _fail(f"{p}: " + "; ".join(map(str, problems)))
        cases.append(case)
    if not cases:
        _fail("no case files given")
    return cases


backend_options = [
    click.option("--config", "config_path", type=click.Path(dir_okay=False), help="INI run configuration."),
    click.option("--backend", type=click.Choice(["remote", "scripted", "replay", "record"]), help="Backend kind."),
    click.option("--script", type=click.Path(dir_okay=False), help="Scripted-backend fixture (JSON)."),
    click.option("--cassette", type=click.Path(dir_okay=False), help="Record/replay cassette (JSONL)."),
    click.option("--seed", type=int, help="Seed passed to the run and the remote backend."),
]


def with_backend_options(f):
    for opt in reversed(backend_options):
        f = opt(f)
    return f


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for info, -vv for debug logging.")
def cli(verbose: int) -> None:
    """Multi-agent courtroom simulation and evaluation tools."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.argument("document", type=click.Path(exists=True, dir_okay=False))
@click.option("--case-id", help="Case id (default: document file stem).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True, help="Output case JSON.")
@with_backend_options
def ingest(document, case_id, out_path, config_path, backend, script, cassette, seed):
    """Extract trial materials from a raw case document."""
    from .ingest import REVIEW_NOTICE, extract_case

    try:
        cfg = load_run_config(config_path, backend_kind=backend, backend_script=script, backend_cassette=cassette, seed=seed)
        be = build_backend(cfg)
        text = Path(document).read_text(encoding="utf-8")
        case = extract_case(text, case_id or Path(document).stem, be)
    except ExtractionIncomplete as exc:
        _fail(f"extraction incomplete, missing: {', '.join(exc.missing)}")
    except (ConfigError, InvalidCase, MockTrialError, ValueError) as exc:
        _fail(str(exc))
    dump_case(case, out_path)
    click.echo(f"wrote {out_path}")
    click.echo(f"review notice: {REVIEW_NOTICE}", err=True)


@cli.command(name="simulate")
@click.argument("cases", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--output-dir", type=click.Path(file_okay=False), help="Parent directory for run directories.")
@click.option("--run-id", help="Run directory name (must not exist yet).")
@click.option("--parallelism", type=int, help="Concurrent trials.")
@click.option("--debate-rounds", type=int, help="Override the number of debate rounds.")
@with_backend_options
def simulate_cmd(cases, output_dir, run_id, parallelism, debate_rounds, config_path, backend, script, cassette, seed):
    """Simulate full trials for CASES (case JSON files or directories of them)."""
    try:
        cfg = load_run_config(
            config_path,
            backend_kind=backend,
            backend_script=script,
            backend_cassette=cassette,
            seed=seed,
            output_dir=output_dir,
            run_id=run_id,
            parallelism=parallelism,
        )
        if debate_rounds is not None:
            from dataclasses import replace

            cfg = replace(cfg, procedure=replace(cfg.procedure, debate_rounds=debate_rounds))
    except (ConfigError, ValueError) as exc:
        _fail(str(exc))
    loaded = _load_cases(cases)
    try:
        manifest = simulate(loaded, cfg)
    except (ConfigError, MockTrialError) as exc:
        _fail(str(exc))
    ok = len(manifest.cases) - len(manifest.failed)
    click.echo(f"run {manifest.run_id}: {ok}/{len(manifest.cases)} cases ok -> {manifest.run_dir}")
    for c in manifest.failed:
        click.echo(f"  FAILED {c.case_id} at {c.failed_stage}: {c.error}", err=True)
    sys.exit(EXIT_PARTIAL if manifest.failed else EXIT_OK)


def _load_predictions(path: str):
    from .judgment import load_prediction_file, load_run_predictions

    p = Path(path)
    return load_run_predictions(p) if p.is_dir() else load_prediction_file(p)


@cli.command(name="evaluate-judgment")
@click.option("--predictions", required=True, type=click.Path(exists=True), help="Prediction JSONL file or run directory.")
@click.option("--truth", required=True, type=click.Path(exists=True, dir_okay=False), help="Truth JSONL with statutory ranges.")
@click.option("--baseline", type=click.Path(exists=True), help="Second system for significance tests.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Write the JSON report here.")
@click.option("--name", default="system", help="Row label in the printed table.")
@click.option("--resamples", default=10_000, show_default=True, help="Permutation resamples.")
@click.option("--seed", default=0, show_default=True, help="Permutation seed.")
def evaluate_judgment(predictions, truth, baseline, out_path, name, resamples, seed):
    """Relative error, hit rate and accuracy of predicted judgments against the truth."""
    from dataclasses import replace

    from .judgment import align, compare_systems, evaluate, format_table, load_truth_file, report_json

    try:
        truths = load_truth_file(truth)
        cases = align(_load_predictions(predictions), truths)
        report = evaluate(cases)
        if baseline:
            base_cases = align(_load_predictions(baseline), truths)
            report = replace(report, significance=compare_systems(cases, base_cases, n_resamples=resamples, seed=seed))
    except AlignmentError as exc:
        _fail(f"case ids do not align: {exc}")
    except (OSError, ValueError, KeyError, MockTrialError) as exc:
        _fail(str(exc))
    if out_path:
        Path(out_path).write_text(report_json(report), encoding="utf-8")
    click.echo(format_table(report, name), nl=False)


@cli.command(name="aggregate-annotations")
@click.argument("annotations", type=click.Path(exists=True, dir_okay=False))
@click.option("--keys", "keys_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Sealed blinding-key file.")
@click.option("--catalog", type=click.Path(exists=True, dir_okay=False), help="Aspect catalog (default: bundled).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Write a JSON report here.")
@click.option("--kappa", "kappa_kind", type=click.Choice(["cohen", "fleiss"]), default="cohen", show_default=True)
@click.option("--unblinded-kappa", is_flag=True, help="Compute agreement on Sim/Human/Draw instead of First/Second/Draw.")
def aggregate_annotations(annotations, keys_path, catalog, out_path, kappa_kind, unblinded_kappa):
    """Majority-vote the annotations into per-aspect Sim/Draw/Human fractions."""
    from .process_eval import (
        aggregate,
        average_kappa,
        fleiss_kappa,
        label_vectors,
        load_catalog,
        read_annotations,
        read_blinding_keys,
        report,
        report_dict,
    )
    from .errors import DegenerateMarginals

    try:
        cat = load_catalog(catalog)
        records = read_annotations(annotations)
        keys = read_blinding_keys(keys_path)
        result = aggregate(records, keys, cat)
    except MissingAnnotation as exc:
        _fail(f"missing annotation: {exc}")
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    vectors = label_vectors(records, keys if unblinded_kappa else None)
    kappa = None
    if len(vectors) >= 2:
        try:
            kappa = (fleiss_kappa if kappa_kind == "fleiss" else average_kappa)(vectors)
        except DegenerateMarginals as exc:
            click.echo(f"kappa undefined: {exc}", err=True)
    click.echo(report(result, cat), nl=False)
    if kappa is not None:
        click.echo(f"{'Fleiss' if kappa_kind == 'fleiss' else 'average Cohen'} kappa: {kappa:.3f}")
    if out_path:
        Path(out_path).write_text(json.dumps(report_dict(result, cat, kappa), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


@cli.command(name="make-pairs")
@click.option("--sim", "sim_paths", multiple=True, required=True, help="Simulated transcript (repeat, in order).")
@click.option("--human", "human_paths", multiple=True, required=True, help="Real trial record (repeat, same order).")
@click.option("--seed", type=int, required=True)
@click.option("--pairs-out", required=True, type=click.Path(dir_okay=False))
@click.option("--keys-out", required=True, type=click.Path(dir_okay=False), help="Sealed key file; keep away from annotators.")
def make_pairs_cmd(sim_paths, human_paths, seed, pairs_out, keys_out):
    """Package simulated/real record pairs in shuffled positions for blind annotation."""
    from .process_eval import make_pairs, write_blinding_keys, write_pairs

    try:
        pairs, keys = make_pairs(list(sim_paths), list(human_paths), seed)
    except ValueError as exc:
        _fail(str(exc))
    write_pairs(pairs, pairs_out)
    write_blinding_keys(keys, keys_out)
    click.echo(f"wrote {len(pairs)} pairs to {pairs_out}; sealed keys in {keys_out}")


def main(argv=None) -> None:
    cli.main(args=argv, prog_name="mocktrial", standalone_mode=True)


if __name__ == "__main__":
    main()
