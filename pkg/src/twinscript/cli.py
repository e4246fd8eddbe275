"""Command line front end: run one script, sweep a corpus, or benchmark.

Exit codes: 0 clean, 1 usage or compile error, 2 leak detected,
3 control-flow divergence, 4 fault.

Corpus manifests are line oriented:

    path expected[:site] [resources=DIR] [registry=FILE]

where expected is clean or leak, and site pins the SiteId the leak must
fire at. Exploit scripts may alternatively carry the annotation in a
`// leak-site: N` comment header.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import aslr
from .bytecode import CompileError, compile_source
from .lang import LexError, ParseError
from .supervisor import (
    BenchRow,
    EngineFault,
    EntropyRegistry,
    RunReport,
    bench,
    run_single,
    spawn_dual,
)

EXIT_CLEAN = 0
EXIT_USAGE = 1
EXIT_LEAK = 2
EXIT_DIVERGENCE = 3
EXIT_FAULT = 4

VERDICT_EXIT_CODES = {
    "clean": EXIT_CLEAN,
    "leak": EXIT_LEAK,
    "divergence": EXIT_DIVERGENCE,
    "fault": EXIT_FAULT,
}

_LEAK_SITE_RE = re.compile(r"^//\s*leak-site:\s*(\d+)\s*$", re.MULTILINE)


def leak_site_annotation(source: str) -> int | None:
    m = _LEAK_SITE_RE.search(source)
    return int(m.group(1)) if m else None


@dataclass
class ManifestEntry:
    path: Path
    expected: str  # "clean" | "leak"
    expected_site: int | None
    resources: Path | None
    registry: Path | None


@dataclass
class CorpusManifest:
    path: Path
    entries: list[ManifestEntry]
    errors: list[str]


def load_manifest(path) -> CorpusManifest:
    path = Path(path)
    entries: list[ManifestEntry] = []
    errors: list[str] = []
    base = path.parent
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            script = base / parts[0]
            expected = parts[1] if len(parts) > 1 else ""
            site = None
            if ":" in expected:
                expected, site_s = expected.split(":", 1)
                try:
                    site = int(site_s)
                except ValueError:
                    errors.append(f"{path}:{ln}: bad site {site_s!r}")
                    continue
            if expected not in ("clean", "leak"):
                errors.append(f"{path}:{ln}: expected clean or leak, got {expected!r}")
                continue
            resources = None
            registry = None
            bad = False
            for opt in parts[2:]:
                if opt.startswith("resources="):
                    resources = base / opt.split("=", 1)[1]
                elif opt.startswith("registry="):
                    registry = base / opt.split("=", 1)[1]
                else:
                    errors.append(f"{path}:{ln}: unknown option {opt!r}")
                    bad = True
            if bad:
                continue
            if not script.is_file():
                errors.append(f"{path}:{ln}: no such script {script}")
                continue
            if expected == "leak" and site is None:
                site = leak_site_annotation(script.read_text(encoding="utf-8"))
                if site is None:
                    errors.append(f"{path}:{ln}: leak entry without a site annotation")
                    continue
            if resources is not None and not resources.is_dir():
                errors.append(f"{path}:{ln}: no such resource dir {resources}")
                continue
            if registry is not None and not registry.is_file():
                errors.append(f"{path}:{ln}: no such registry file {registry}")
                continue
            entries.append(ManifestEntry(script, expected, site, resources, registry))
    return CorpusManifest(path, entries, errors)


def _load_catalogue(args) -> tuple:
    if args.catalogue:
        return aslr.load_catalogue(args.catalogue)
    return aslr.DEFAULT_CATALOGUE


def _load_registry(path) -> EntropyRegistry:
    if path:
        return EntropyRegistry.load(path)
    return EntropyRegistry.default()


def _report_path(arg_path) -> Path | None:
    if arg_path is None:
        return None
    path = Path(arg_path)
    env_dir = os.environ.get("TWINSCRIPT_REPORT_DIR")
    if env_dir:
        return Path(env_dir) / path.name
    return path


def _write_report(report: RunReport, path: Path | None):
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
        fh.write("\n")


def run_script(
    script_path,
    mode: str = "enforce",
    seed_master: int = 1,
    seed_twin: int = 2,
    catalogue=None,
    registry: EntropyRegistry | None = None,
    resources=None,
    transport: str = "inproc",
    timeout: float = 10.0,
) -> RunReport:
    """Programmatic equivalent of `twinscript run`."""
    source = Path(script_path).read_text(encoding="utf-8")
    program = compile_source(source)
    catalogue = catalogue or aslr.DEFAULT_CATALOGUE
    registry = registry if registry is not None else EntropyRegistry.default()
    if mode == "single":
        report, _vm = run_single(program, catalogue, seed_master, resources=resources)
        return report
    session = spawn_dual(
        program,
        catalogue,
        (seed_master, seed_twin),
        registry,
        mode=mode,
        transport=transport,
        resources=resources,
        timeout=timeout,
        source=source,
    )
    return session.run()


def cmd_run(args) -> int:
    try:
        report = run_script(
            args.script,
            mode=args.mode,
            seed_master=args.seed_master,
            seed_twin=args.seed_twin,
            catalogue=_load_catalogue(args),
            registry=_load_registry(args.registry),
            resources=args.resources,
            transport=args.transport,
            timeout=args.timeout,
        )
    except (LexError, ParseError, CompileError) as e:
        print(f"compile error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, aslr.CatalogueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(report.to_text())
    _write_report(report, _report_path(args.report))
    return VERDICT_EXIT_CODES[report.verdict]


@dataclass
class CorpusResult:
    entry: ManifestEntry
    report: RunReport | None
    ok: bool
    detail: str


def run_corpus(
    manifest: CorpusManifest,
    seed_master: int = 1,
    seed_twin: int = 2,
    transport: str = "inproc",
    timeout: float = 10.0,
) -> list[CorpusResult]:
    results: list[CorpusResult] = []
    for entry in manifest.entries:
        registry = (
            EntropyRegistry.load(entry.registry)
            if entry.registry
            else EntropyRegistry.default()
        )
        try:
            report = run_script(
                entry.path,
                seed_master=seed_master,
                seed_twin=seed_twin,
                registry=registry,
                resources=entry.resources,
                transport=transport,
                timeout=timeout,
            )
        except (LexError, ParseError, CompileError, OSError) as e:
            results.append(CorpusResult(entry, None, False, f"compile error: {e}"))
            continue
        if report.verdict != entry.expected:
            results.append(
                CorpusResult(
                    entry,
                    report,
                    False,
                    f"expected {entry.expected}, got {report.verdict}",
                )
            )
            continue
        if entry.expected == "leak":
            sites = [l.site for l in report.leaks]
            if entry.expected_site not in sites:
                results.append(
                    CorpusResult(
                        entry,
                        report,
                        False,
                        f"leak at sites {sites}, expected {entry.expected_site}",
                    )
                )
                continue
        results.append(CorpusResult(entry, report, True, report.verdict))
    return results


def cmd_corpus(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    for err in manifest.errors:
        print(f"manifest error: {err}", file=sys.stderr)
    results = run_corpus(
        manifest,
        seed_master=args.seed_master,
        seed_twin=args.seed_twin,
        transport=args.transport,
        timeout=args.timeout,
    )
    true_pos = false_pos = false_neg = mismatches = 0
    for r in results:
        status = "ok" if r.ok else "MISMATCH"
        print(f"{status:8s} {r.entry.path.name:32s} {r.detail}")
        if not r.ok:
            mismatches += 1
        got_leak = r.report is not None and r.report.verdict == "leak"
        if r.entry.expected == "leak" and got_leak and r.ok:
            true_pos += 1
        elif r.entry.expected == "clean" and got_leak:
            false_pos += 1
        elif r.entry.expected == "leak" and not got_leak:
            false_neg += 1
    print(
        f"summary: {len(results)} scripts, {true_pos} true positives,"
        f" {false_pos} false positives, {false_neg} false negatives,"
        f" {mismatches} expectation mismatches"
    )
    if manifest.errors:
        return EXIT_USAGE
    return EXIT_CLEAN if mismatches == 0 else EXIT_USAGE


def format_bench_table(rows: list[BenchRow]) -> str:
    lines = [f"{'script':<28} {'single_ms':>10} {'dual_ms':>10} {'overhead':>9}"]
    for row in rows:
        lines.append(
            f"{row.name:<28} {row.single_ms:>10.2f} {row.dual_ms:>10.2f}"
            f" {row.overhead_pct:>8.1f}%"
        )
    if rows:
        mean = sum(r.overhead_pct for r in rows) / len(rows)
        lines.append(f"{'mean':<28} {'':>10} {'':>10} {mean:>8.1f}%")
    return "\n".join(lines)


def cmd_bench(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    for err in manifest.errors:
        print(f"manifest error: {err}", file=sys.stderr)
    if manifest.errors:
        return EXIT_USAGE
    bad = [e for e in manifest.entries if e.expected != "clean"]
    if bad:
        print("error: bench manifests must be benign-only", file=sys.stderr)
        return EXIT_USAGE
    catalogue = _load_catalogue(args)
    rows: list[BenchRow] = []
    for entry in manifest.entries:
        source = entry.path.read_text(encoding="utf-8")
        try:
            program = compile_source(source)
            rows.append(
                bench(
                    program,
                    catalogue,
                    repetitions=args.repetitions,
                    resources=entry.resources,
                    name=entry.path.name,
                )
            )
        except (LexError, ParseError, CompileError) as e:
            print(f"compile error in {entry.path.name}: {e}", file=sys.stderr)
            return EXIT_USAGE
        except EngineFault as e:
            print(f"fault while benchmarking {entry.path.name}: {e}", file=sys.stderr)
            return EXIT_FAULT
    print(format_bench_table(rows))
    return EXIT_CLEAN


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twinscript",
        description="dual-execution memory disclosure detection for ts0 scripts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one script under detection")
    run_p.add_argument("script")
    run_p.add_argument(
        "--mode", choices=("enforce", "calibrate", "single"), default="enforce"
    )
    run_p.add_argument("--seed-master", type=int, default=1)
    run_p.add_argument("--seed-twin", type=int, default=2)
    run_p.add_argument("--catalogue", default=None)
    run_p.add_argument("--registry", default=None)
    run_p.add_argument("--resources", default=None)
    run_p.add_argument("--transport", choices=("inproc", "os"), default="inproc")
    run_p.add_argument("--report", default=None)
    run_p.add_argument("--timeout", type=float, default=10.0)
    run_p.set_defaults(func=cmd_run)

    corpus_p = sub.add_parser("corpus", help="run a manifest and check expectations")
    corpus_p.add_argument("manifest")
    corpus_p.add_argument("--seed-master", type=int, default=1)
    corpus_p.add_argument("--seed-twin", type=int, default=2)
    corpus_p.add_argument("--transport", choices=("inproc", "os"), default="inproc")
    corpus_p.add_argument("--timeout", type=float, default=10.0)
    corpus_p.set_defaults(func=cmd_corpus)

    bench_p = sub.add_parser("bench", help="single vs dual wall clock on a manifest")
    bench_p.add_argument("manifest")
    bench_p.add_argument("--repetitions", type=int, default=5)
    bench_p.add_argument("--catalogue", default=None)
    bench_p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CLEAN if e.code in (0, None) else EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
