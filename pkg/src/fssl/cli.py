"""Command-line entry point: ``fssl {synth,run,ablate,report,gradcheck}``.

Every subcommand takes ``--config PATH`` (YAML, see :mod:`fssl.config`),
``--seed N`` (overrides the config) and ``--out DIR``. Client updates inside
a federated round run on ``FSSL_THREADS`` worker threads (default 1).
Every file written carries the config hash, seed and build id in a header.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .config import ExperimentConfig, build_id, load_config
from .data import export_manifest, load_manifest, synth_corpus
from .errors import ConfigError, FsslError
from .evaluation import (PARTITIONS, RECALL_LEVELS, SYSTEMS, EvalReport, absolute_table_csv, evaluate_scores,
                         pr_curve, read_scores_csv, relative_report, relative_table_csv, relative_table_json,
                         scores_csv, table_metrics)
from .federation import AUDIT_HEADER
from .oracles import gradient_suite
from .pipeline import ArtifactStore, BenchmarkResult, FeatureBank, run_benchmark
from .plots import pr_curve_svg

log = logging.getLogger("fssl")


def provenance(cfg: ExperimentConfig) -> List[str]:
    return [f"config_hash={cfg.hash()} seed={cfg.seed} build={build_id()}"]


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _audit_csv(records, header_lines):
    lines = [f"# {h}" for h in header_lines] + [AUDIT_HEADER] + [r.csv_row() for r in records]
    return "\n".join(lines) + "\n"


def _loss_csv(losses, header_lines):
    lines = [f"# {h}" for h in header_lines] + ["epoch,mean_clip_loss"]
    lines += [f"{i},{v:.10g}" for i, v in enumerate(losses, start=1)]
    return "\n".join(lines) + "\n"


def _corpus(cfg: ExperimentConfig, corpus: Optional[str]):
    if corpus:
        return load_manifest(corpus)
    return synth_corpus(cfg.data, cfg.seed)


def write_reports(reports: Dict[str, EvalReport], rows: Dict[str, list], out: Path,
                  header_lines: Sequence[str], baseline: str = "ssl_wo_client", plots: bool = True,
                  recalls: Sequence[float] = RECALL_LEVELS):
    """Relative (Table 1 layout) CSV and JSON, absolute metrics CSV, and one SVG per partition."""
    names = list(reports)
    base = baseline if baseline in reports else names[0]
    others = [reports[n] for n in names if n != base]
    metrics = table_metrics(recalls)
    table = relative_report(reports[base], others, metrics=metrics)
    meta = {"provenance": list(header_lines), "baseline": base}
    written = [
        _write(out / "report.csv", relative_table_csv(table, metrics=metrics, header_lines=header_lines)),
        _write(out / "report.json", relative_table_json(table, metrics=metrics, meta=meta) + "\n"),
        _write(out / "metrics.csv", absolute_table_csv([reports[n] for n in names], header_lines=header_lines,
                                                       recalls=recalls)),
    ]
    if plots:
        for part in PARTITIONS:
            curves = {}
            for n in names:
                pairs = [(r[3], r[4]) for r in rows[n] if r[0] == part]
                if part in reports[n].partitions:
                    curves[n] = pr_curve(pairs)
            if curves:
                svg = pr_curve_svg(curves, f"Precision-recall, partition {part}", header_lines=header_lines)
                written.append(_write(out / "plots" / f"pr_{part}.svg", svg))
    return written


# ------------------------------------------------------------------ commands

def cmd_synth(cfg: ExperimentConfig, out: Path) -> Path:
    split = synth_corpus(cfg.data, cfg.seed)
    manifest = export_manifest(split, out / "corpus")
    _write(out / "config.yaml", "".join(f"# {h}\n" for h in provenance(cfg)) + cfg.to_yaml())
    n_client = sum(len(v) for v in split.client_clips.values())
    print(f"wrote {len(split)} clips ({len(split.server_clips)} server, {n_client} client, "
          f"{len(split.test_clips)} test) to {manifest}")
    return manifest


def _store(cfg, out):
    return ArtifactStore(out / "models", f"{cfg.hash()}:{cfg.seed}")


def _save_cmvn(cfg, split, out):
    bank = FeatureBank(split, cfg.features)
    bank.stats.save(out / "models" / "cmvn.bin")


def cmd_run(cfg: ExperimentConfig, out: Path, corpus: Optional[str] = None) -> BenchmarkResult:
    """Three systems, one multiplier: models, scores, audit, report tables and plots."""
    header = provenance(cfg)
    split = _corpus(cfg, corpus)
    _write(out / "config.yaml", "".join(f"# {h}\n" for h in header) + cfg.to_yaml())
    store = _store(cfg, out)
    result = run_benchmark(split, cfg.plan(), cfg.seed, store=store, recalls=cfg.eval.recalls)
    _save_cmvn(cfg, split, out)
    for name in SYSTEMS:
        _write(out / "scores" / f"{name}.csv", scores_csv(result.scores[name], header_lines=header))
    _write(out / "audit.csv", _audit_csv(result.audit, header))
    _write(out / "pretrain_loss.csv", _loss_csv(result.pretrain_losses, header))
    write_reports(result.reports, result.scores, out, header, plots=cfg.output.plots, recalls=cfg.eval.recalls)
    metrics = table_metrics(cfg.eval.recalls)
    table = relative_report(result.reports["ssl_wo_client"], [result.reports["fssl"], result.reports["ssl_w_client"]],
                            metrics=metrics)
    print(relative_table_csv(table, metrics=metrics), end="")
    return result


def ablation_csv(result: BenchmarkResult, header_lines, recalls) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    cols = ["pr_auc", "roc_auc"] + [f"p@r{r:g}" for r in recalls]
    w.writerow(["system", "multiplier", "partition", "n_clips", "positives"] + cols)
    base = result.reports["ssl_wo_client"]
    rows = [("ssl_wo_client", 0, base)] + [("fssl", m, rep) for m, rep in sorted(result.extra_fssl.items())]
    for system, m, rep in rows:
        for p in PARTITIONS:
            if p not in rep.partitions:
                continue
            pm = rep.partitions[p]
            w.writerow([system, m, p, pm.n_clips, pm.positives] + [f"{rep.metric(p, c):.10f}" for c in cols])
    return buf.getvalue()


def cmd_ablate(cfg: ExperimentConfig, out: Path, corpus: Optional[str] = None) -> BenchmarkResult:
    """FSSL at every configured client-data multiplier (sharing M_0), against the no-client baseline."""
    header = provenance(cfg)
    split = _corpus(cfg, corpus)
    _write(out / "config.yaml", "".join(f"# {h}\n" for h in header) + cfg.to_yaml())
    mults = cfg.pipeline.ablation_multipliers
    plan = cfg.plan(multiplier=mults[0])
    result = run_benchmark(split, plan, cfg.seed, extra_multipliers=mults, store=_store(cfg, out),
                           recalls=cfg.eval.recalls)
    _write(out / "ablation.csv", ablation_csv(result, header, cfg.eval.recalls))
    reports = {"ssl_wo_client": result.reports["ssl_wo_client"]}
    rows = {"ssl_wo_client": result.scores["ssl_wo_client"]}
    for m in sorted(result.extra_fssl):
        name = f"fssl_{m}x"
        reports[name] = EvalReport(name, result.extra_fssl[m].partitions)
        rows[name] = result.extra_scores[m]
        _write(out / "scores" / f"{name}.csv", scores_csv(rows[name], header_lines=header))
        _write(out / f"audit_{m}x.csv", _audit_csv(result.extra_audits[m], header))
    _write(out / "scores" / "ssl_wo_client.csv", scores_csv(rows["ssl_wo_client"], header_lines=header))
    write_reports(reports, rows, out, header, plots=cfg.output.plots, recalls=cfg.eval.recalls)
    print(ablation_csv(result, (), cfg.eval.recalls), end="")
    return result


def _score_files(paths) -> List[Path]:
    files = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            sub = p / "scores" if (p / "scores").is_dir() else p
            files.extend(sorted(sub.glob("*.csv")))
        elif p.is_file():
            files.append(p)
        else:
            raise FsslError(f"{p}: no such file or directory")
    if not files:
        raise FsslError("no score files found")
    return files


def _header_of(path: Path) -> List[str]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            out.append(line[1:].strip())
    return out


def cmd_report(paths, out: Path, recalls: Sequence[float] = RECALL_LEVELS, plots: bool = True):
    """Rebuild the relative table and PR plots from per-system score CSVs."""
    files = _score_files(paths)
    reports, rows = {}, {}
    for f in files:
        name = f.stem
        rows[name] = read_scores_csv(f)
        reports[name] = evaluate_scores(name, rows[name], recalls=recalls)
    order = [s for s in SYSTEMS if s in reports] + sorted(n for n in reports if n not in SYSTEMS)
    reports = {n: reports[n] for n in order}
    header = _header_of(files[0])
    written = write_reports(reports, rows, out, header, plots=plots, recalls=recalls)
    for w in written:
        print(w)
    return written


def cmd_gradcheck(cfg: ExperimentConfig, out: Optional[Path]) -> bool:
    lines = []

    def show(res):
        lines.append(res.line())
        print(res.line(), flush=True)

    results = gradient_suite(cfg.apc, cfg.classifier, seed=cfg.seed, progress=show)
    ok = all(r.passed for r in results)
    summary = f"{'PASS' if ok else 'FAIL'} {sum(r.passed for r in results)}/{len(results)} oracles"
    print(summary)
    if out is not None:
        _write(out / "gradcheck.txt", "".join(f"# {h}\n" for h in provenance(cfg)) + "\n".join(lines + [summary]) + "\n")
    return ok


# ------------------------------------------------------------------ argument handling

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML experiment config")
    common.add_argument("--seed", type=int, metavar="N", help="overrides the config seed")
    common.add_argument("--out", metavar="DIR", help="output directory (default: output.dir from the config)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="fssl", description="Federated self-supervised learning simulator for acoustic event classification.",
        epilog="FSSL_THREADS caps the number of client updates run in parallel within a round.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate the synthetic corpus as WAV files plus a manifest")
    for name, text in (("run", "train and evaluate the three systems"),
                       ("ablate", "FSSL at each client-data multiplier")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--corpus", metavar="MANIFEST", help="use a WAV manifest instead of synthesizing")
    p = sub.add_parser("report", parents=[common], help="relative table and PR plots from score CSVs")
    p.add_argument("paths", nargs="+", help="run directories or per-system score CSV files")
    sub.add_parser("gradcheck", parents=[common], help="run the finite-difference oracle suite")
    return parser


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = _resolve(args)
        out = Path(args.out) if args.out else Path(cfg.output.dir)
        if args.command == "synth":
            cmd_synth(cfg, out)
        elif args.command == "run":
            cmd_run(cfg, out, args.corpus)
        elif args.command == "ablate":
            cmd_ablate(cfg, out, args.corpus)
        elif args.command == "report":
            cmd_report(args.paths, out, recalls=cfg.eval.recalls, plots=cfg.output.plots)
        elif args.command == "gradcheck":
            return 0 if cmd_gradcheck(cfg, Path(args.out) if args.out else None) else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FsslError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
