"""Command-line interface: ``specnet <command> [flags]``.

Exit codes: 0 success, 2 model, 3 data, 4 config/usage, 5 numeric.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .bundle import deserialize_bundle, serialize_bundle
from .config import TrainConfig, apply_ablation, load_config
from .dom import RawPage, load_manifest, read_pages
from .errors import ConfigError, EmptyDataset, FileMissing, SpecNetError
from .perturb import KINDS, PerturbationSpec, perturb_pages
from .synth import generate, generate_split, write_corpus
from .train import calibrate, evaluate, predict_page, predict_pages, train

log = logging.getLogger("specnet")

BUCKETS = ((0, 500, "<500"), (500, 2000, "500-2000"), (2000, 10000, "2000-10000"), (10000, None, ">10000"))


class UsageError(ConfigError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems share the config exit code
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _env_int(name: str) -> int | None:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name}: expected an integer, got {raw!r}") from None


def build_parser() -> Parser:
    common = Parser(add_help=False)
    common.add_argument("--config", help="key = value training configuration file")
    common.add_argument("--model", help="model bundle path (written by train, read by the others)")
    common.add_argument("--seed", type=int, help="random seed (env SPECNET_SEED)")
    common.add_argument("--threads", type=int, help="page-level worker threads (env SPECNET_THREADS)")
    common.add_argument("--quiet", action="store_true", help="only errors on stderr")

    p = Parser(prog="specnet", description="Reference-free phishing detection from HTML structure and domain.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    t = sub.add_parser("train", parents=[common], help="train a model bundle")
    t.add_argument("--train", required=True, help="training manifest")
    t.add_argument("--val", required=True, help="validation manifest")
    t.add_argument("--ablation", help="variant switch (none, no_cls_loss, no_rec_loss, no_decoder, no_ae, no_gnn, no_domain)")
    t.add_argument("--no-domain", action="store_true", help="train without domain features")
    t.add_argument("--epochs", type=int)
    t.add_argument("--patience", type=int)

    c = sub.add_parser("calibrate", parents=[common], help="recompute the threshold on a validation set")
    c.add_argument("--val", required=True)
    c.add_argument("--out", help="output bundle (default: overwrite --model)")

    e = sub.add_parser("eval", parents=[common], help="metrics on a labelled manifest")
    e.add_argument("--data", required=True)

    pr = sub.add_parser("predict", parents=[common], help="JSON-lines verdicts")
    pr.add_argument("--manifest")
    pr.add_argument("--html", help="single HTML file")
    pr.add_argument("--domain", help="domain of the single page")

    b = sub.add_parser("bench", parents=[common], help="single-threaded latency by page size")
    b.add_argument("--data", help="manifest of pages to time")
    b.add_argument("--synth-nodes", type=int, help="time generated pages of about this many nodes instead")
    b.add_argument("--pages", type=int, default=20, help="generated pages (with --synth-nodes)")
    b.add_argument("--repeat", type=int, default=1)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic two-family corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--templates", type=int, default=2)
    s.add_argument("--pages-per-template", type=int, default=10)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--overlap", type=float, default=0.0, help="share of cross-family look-alikes")
    s.add_argument("--split", help="per-class train,val,test counts (e.g. 500,100,200)")
    s.add_argument("--nodes", type=int, help="target node count per page")

    q = sub.add_parser("perturb", parents=[common], help="apply structural perturbations to a manifest")
    q.add_argument("--data", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--kind", required=True, help=f"comma-separated, applied in order: {', '.join(KINDS)}")
    q.add_argument("--intensity", type=float, required=True)
    return p


# ---------------------------------------------------------------------------
# commands


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    if getattr(args, "patience", None) is not None:
        changes["patience"] = args.patience
    if getattr(args, "no_domain", False):
        changes["use_domain"] = False
    cfg = cfg.replace(**changes) if changes else cfg
    if getattr(args, "ablation", None):
        cfg = apply_ablation(cfg, args.ablation)
    return cfg


def _require_model(args) -> str:
    if not args.model:
        raise UsageError("--model is required for this command")
    return args.model


def _pages(path: str) -> list[RawPage]:
    pages = read_pages(path)
    if not pages:
        raise EmptyDataset(f"no readable pages in {path}")
    return pages


def cmd_train(args, out) -> int:
    model_path = _require_model(args)
    cfg = _config(args)

    def progress(info):
        log.info("epoch %(epoch)d loss %(loss).4f val_f1 %(val_f1).4f tau %(tau).4g", info)

    bundle = train(cfg, _pages(args.train), _pages(args.val), progress)
    serialize_bundle(bundle, model_path)
    out.write(json.dumps(bundle.metadata, sort_keys=True) + "\n")
    return 0


def cmd_calibrate(args, out) -> int:
    bundle = deserialize_bundle(_require_model(args))
    new = calibrate(bundle, _pages(args.val))
    serialize_bundle(new, args.out or args.model)
    out.write(json.dumps({"tau": new.tau}) + "\n")
    return 0


def cmd_eval(args, out) -> int:
    bundle = deserialize_bundle(_require_model(args))
    report = evaluate(bundle, _pages(args.data), threads=args.threads or 1)
    out.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
    return 0


def cmd_predict(args, out) -> int:
    if bool(args.manifest) == bool(args.html):
        raise UsageError("give exactly one of --manifest or --html")
    if args.domain and not args.html:
        raise UsageError("--domain only applies with --html")
    model = deserialize_bundle(_require_model(args)).model()
    if args.html:
        try:
            html = Path(args.html).read_bytes()
        except OSError as exc:
            raise FileMissing(f"cannot read {args.html}: {exc}") from exc
        pages: list[RawPage | Exception] = [RawPage(html, args.domain, None, args.html)]
    else:
        pages = list(load_manifest(args.manifest))
    ok = [p for p in pages if isinstance(p, RawPage)]
    results = iter(predict_pages(model, ok, threads=args.threads or 1))
    written = 0
    for item in pages:
        res = next(results) if isinstance(item, RawPage) else item
        if isinstance(res, Exception):
            sys.stderr.write(f"error: {getattr(item, 'source', '')}: {res}\n")
            continue
        out.write(json.dumps(res.to_json()) + "\n")
        written += 1
    if written == 0:
        raise EmptyDataset("no page could be processed")
    return 0


def latency_table(reports) -> dict:
    table = {}
    for lo, hi, name in BUCKETS:
        lat = np.array([r.latency_ms for r in reports if r.n_nodes >= lo and (hi is None or r.n_nodes < hi)])
        if lat.size:
            table[name] = {"pages": int(lat.size), "p50_ms": float(np.median(lat)),
                           "p90_ms": float(np.percentile(lat, 90)), "p99_ms": float(np.percentile(lat, 99)),
                           "mean_ms": float(lat.mean())}
    all_lat = np.array([r.latency_ms for r in reports])
    table["all"] = {"pages": int(all_lat.size), "p50_ms": float(np.median(all_lat)),
                    "p90_ms": float(np.percentile(all_lat, 90))}
    return table


def run_bench(model, pages: Sequence[RawPage], repeat: int = 1) -> list:
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        predict_page(model, pages[0])  # warm-up
        reports = []
        for _ in range(max(1, repeat)):
            for page in pages:
                reports.append(predict_page(model, page))
        return reports
    finally:
        torch.set_num_threads(threads)


def cmd_bench(args, out) -> int:
    if bool(args.data) == bool(args.synth_nodes):
        raise UsageError("give exactly one of --data or --synth-nodes")
    model = deserialize_bundle(_require_model(args)).model()
    if args.data:
        pages = _pages(args.data)
    else:
        synth = generate(n_templates=max(2, args.pages), pages_per_template=1, seed=args.seed or 0,
                         target_nodes=args.synth_nodes)
        pages = [RawPage(p.html, p.domain, p.label) for p in synth]
    out.write(json.dumps(latency_table(run_bench(model, pages, args.repeat)), sort_keys=True) + "\n")
    return 0


def cmd_synth(args, out) -> int:
    seed = args.seed or 0
    if args.split:
        try:
            counts = [int(x) for x in args.split.split(",")]
        except ValueError:
            raise UsageError(f"--split expects comma-separated integers, got {args.split!r}") from None
        if not 1 <= len(counts) <= 3 or min(counts) < 0:
            raise UsageError("--split takes one to three non-negative counts")
        splits = generate_split(counts, args.templates, args.noise, seed, args.nodes, args.overlap)
        for name, pages in splits.items():
            write_corpus(args.out, pages, manifest=f"{name}.jsonl", subdir=f"pages/{name}")
        out.write(json.dumps({k: len(v) for k, v in splits.items()}) + "\n")
    else:
        pages = generate(args.templates, args.pages_per_template, args.noise, seed, args.nodes, args.overlap)
        write_corpus(args.out, pages)
        out.write(json.dumps({"pages": len(pages)}) + "\n")
    return 0


def cmd_perturb(args, out) -> int:
    kinds = [k.strip() for k in args.kind.split(",") if k.strip()]
    specs = [PerturbationSpec(k, args.intensity, args.seed or 0) for k in kinds]
    path, logs = perturb_pages(_pages(args.data), specs, args.out)
    out.write(json.dumps({"manifest": str(path), "pages": len(logs),
                          "edits": sum(lg.count() for lg in logs)}) + "\n")
    return 0


COMMANDS = {"train": cmd_train, "calibrate": cmd_calibrate, "eval": cmd_eval, "predict": cmd_predict,
            "bench": cmd_bench, "synth": cmd_synth, "perturb": cmd_perturb}


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        if args.seed is None:
            args.seed = _env_int("SPECNET_SEED")
        if args.threads is None:
            args.threads = _env_int("SPECNET_THREADS")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("threads: must be at least 1")
        logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if args.quiet:
            warnings.simplefilter("ignore")
        return COMMANDS[args.command](args, out)
    except SpecNetError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code
    except ValueError as exc:  # argument values rejected by constructors
        sys.stderr.write(f"error: {exc}\n")
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
