"""Command-line front end: ``diarfuse <subcommand> ...``.

Exit codes: 0 when every session produced fused output, 2 on partial failure,
1 on fatal errors (bad config, unreadable input, no session fused).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import logs
from .errors import DiarizationError
from .fusion import RANK_WEIGHTINGS, fuse
from .local_io import read_bundles, write_bundles
from .pipeline import (
    PipelineConfig,
    channel_name,
    dump_config,
    exit_code,
    export_ssa_labels,
    load_config,
    run,
    run_channel,
    write_ssa_labels,
)
from .scoring import ScoringOptions, macro_der, pooled, read_scenario_map, scenario_reports, score_sessions
from .simulate import EXPERIMENTS, SimConfig, generate_ground_truth, plot_trend, run_trend_experiment, synthesize_channel
from .timeline import Uem, read_rttm, read_uem, write_rttm, write_uem

log = logging.getLogger(__name__)


def _config(args) -> PipelineConfig:
    return load_config(getattr(args, "config", None), getattr(args, "set", None) or ())


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file layered over the defaults")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value (repeatable)")


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.output:
        cfg = replace(cfg, output_dir=args.output)
    if args.session:
        sid, *paths = args.session
        if not paths:
            raise SystemExit("--session needs an id followed by bundle files")
        cfg = replace(cfg, channels={**cfg.channels, sid: tuple(paths)})
    if not cfg.channels:
        print("no sessions configured (use [channels] in the config or --session)", file=sys.stderr)
        return 1
    report = run(cfg, iteration=args.iteration)
    for sid, entry in sorted(report["sessions"].items()):
        print(f"{sid}\t{entry['status']}")
    return exit_code(report)


def cmd_cluster(args) -> int:
    cfg = _config(args)
    bundles = read_bundles(args.bundles)
    result = run_channel(bundles, cfg, channel_name(args.bundles))
    write_rttm(result.timeline, args.out or sys.stdout)
    if args.diagnostics:
        diag = {k: v for k, v in result.diagnostics.items() if k != "merges"}
        Path(args.diagnostics).write_text(json.dumps(diag, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def cmd_fuse(args) -> int:
    per_file = [{t.session_id: t for t in read_rttm(p)} for p in args.hyps]
    if args.weights is not None and len(args.weights) != len(args.hyps):
        print(f"{len(args.weights)} weights for {len(args.hyps)} hypothesis files", file=sys.stderr)
        return 1
    sessions = sorted({sid for d in per_file for sid in d})
    fused = []
    for sid in sessions:
        present = [(d[sid], (args.weights or [1.0] * len(per_file))[i]) for i, d in enumerate(per_file) if sid in d]
        fused.append(fuse([t for t, _ in present], [w for _, w in present], args.rank_weighting, sid))
    write_rttm(fused, args.out or sys.stdout)
    return 0


def cmd_score(args) -> int:
    refs = read_rttm(args.ref)
    hyps = read_rttm(args.hyp)
    uems: dict[str, Uem] | None = read_uem(args.uem) if args.uem else None
    opts = ScoringOptions(collar=args.collar, score_overlaps=not args.no_overlaps)
    reports = score_sessions(refs, hyps, opts, uems)
    scenarios = read_scenario_map(args.scenarios) if args.scenarios else None

    rows = list(reports) if args.per_session else []
    total = pooled(reports)
    header = f"{'session':<24}{'CF':>8}{'FA':>8}{'MI':>8}{'DER':>8}{'speech_s':>12}"
    print(header)
    for r in rows + ([*scenario_reports(reports, scenarios).values()] if scenarios else []) + [total]:
        print(f"{r.session_id:<24}{r.cf:>8.2f}{r.fa:>8.2f}{r.mi:>8.2f}{r.der:>8.2f}{r.scored_speech_s:>12.3f}")
    if scenarios or args.macro_per_session:
        macro = macro_der(reports, None if args.macro_per_session else scenarios)
        print(f"{'MACRO':<24}{'':>8}{'':>8}{'':>8}{macro:>8.2f}")
    if args.records:
        with open(args.records, "w", encoding="utf-8") as fh:
            for r in list(reports) + [total]:
                fh.write(json.dumps(r.as_record(), sort_keys=True) + "\n")
    return 0


def cmd_simulate(args) -> int:
    cfg = SimConfig(
        seed=args.seed,
        n_speakers=args.speakers,
        session_length=args.length,
        overlap_fraction=args.overlap,
        embedding_noise_base=args.noise,
        permutation_error_rate=args.permutation_rate,
        n_channels=args.channels,
        channel_outlier_indices=frozenset(args.outliers or ()),
        segment_size=args.segment_size,
        session_id=args.session_id,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth = generate_ground_truth(cfg)
    write_rttm(truth.timeline, out / "ref.rttm")
    write_uem(Uem(cfg.session_id, ((0.0, cfg.session_length),)), out / "all.uem")
    for c in range(cfg.n_channels):
        write_bundles(synthesize_channel(truth, cfg, c), out / f"ch{c}.jsonl")
    print(out)
    return 0


def cmd_trend(args) -> int:
    seeds = args.seeds if args.seeds else list(range(1, args.n_seeds + 1))
    grid = json.loads(args.grid) if args.grid else None
    result = run_trend_experiment(args.name, grid, seeds)
    text = result.to_jsonl()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.plot:
        plot_trend(result, args.plot)
    return 0


def cmd_ssa_labels(args) -> int:
    cfg = _config(args)
    fused = {t.session_id: t for t in read_rttm(args.fused)}
    channels = {channel_name(p): read_bundles(p) for p in args.bundles}
    sid = next(iter(channels.values()))[0].session_id if channels else ""
    if sid not in fused:
        print(f"session {sid!r} not in {args.fused}", file=sys.stderr)
        return 1
    labels = export_ssa_labels(fused[sid], channels, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, ch in sorted(labels.channels.items()):
        write_ssa_labels(ch, out / f"{name}.jsonl")
    return 0


def cmd_config(args) -> int:
    cfg = _config(args) if (args.config or args.set) else PipelineConfig()
    sys.stdout.write(dump_config(cfg))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diarfuse", description="Clustering, fusion and scoring for segment-wise diarization output.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every stage as JSON lines on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline over configured sessions")
    _add_config_flags(p)
    p.add_argument("--output", help="output directory (overrides [pipeline] output_dir)")
    p.add_argument("--session", nargs="+", metavar="ID_OR_FILE", help="session id followed by its channel bundle files")
    p.add_argument("--iteration", type=int, default=1, help="pass number recorded in the outputs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("cluster", help="cluster and stitch a single channel")
    _add_config_flags(p)
    p.add_argument("bundles", help="segment bundle file (JSON lines)")
    p.add_argument("--out", help="RTTM path (default stdout)")
    p.add_argument("--diagnostics", help="write clustering diagnostics as JSON here")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("fuse", help="DOVER-LAP fusion of RTTM hypotheses")
    p.add_argument("hyps", nargs="+", help="one RTTM per channel")
    p.add_argument("--weights", type=float, nargs="+", help="one positive weight per hypothesis file")
    p.add_argument("--rank-weighting", choices=RANK_WEIGHTINGS, default="linear")
    p.add_argument("--out", help="RTTM path (default stdout)")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("score", help="DER with collar and optimal mapping")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--uem")
    p.add_argument("--collar", type=float, default=0.25)
    p.add_argument("--no-overlaps", action="store_true", help="skip regions with overlapping reference speech")
    p.add_argument("--per-session", action="store_true")
    p.add_argument("--scenarios", help="'session scenario' map; adds per-scenario rows and macro DER")
    p.add_argument("--macro-per-session", action="store_true", help="macro DER as the mean over sessions instead of scenarios")
    p.add_argument("--records", help="write per-session JSON lines here")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("simulate", help="synthetic session: reference RTTM plus per-channel bundles")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--session-id", default="sim")
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--length", type=float, default=600.0, help="seconds")
    p.add_argument("--overlap", type=float, help="target overlapped fraction of speech")
    p.add_argument("--noise", type=float, default=SimConfig(seed=0).embedding_noise_base, help="embedding noise scale")
    p.add_argument("--permutation-rate", type=float, default=SimConfig(seed=0).permutation_error_rate)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--outliers", type=int, nargs="*", help="indices of corrupted channels")
    p.add_argument("--segment-size", type=float, default=80.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("trend", help="seeded trend experiment, records as JSON lines")
    p.add_argument("name", choices=EXPERIMENTS)
    p.add_argument("--n-seeds", type=int, default=10)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--grid", help="JSON list of override objects (default grid per experiment)")
    p.add_argument("--out", help="JSON-lines path (default stdout)")
    p.add_argument("--plot", help="write mean DER per grid point as an image")
    p.set_defaults(func=cmd_trend)

    p = sub.add_parser("ssa-labels", help="rasterize a fused RTTM onto channel segment grids")
    _add_config_flags(p)
    p.add_argument("--fused", required=True)
    p.add_argument("--bundles", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ssa_labels)

    p = sub.add_parser("config", help="print the effective configuration")
    _add_config_flags(p)
    p.add_argument("--dump", action="store_true", required=True)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logs.configure(logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (DiarizationError, OSError, ValueError) as exc:
        print(f"diarfuse {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
