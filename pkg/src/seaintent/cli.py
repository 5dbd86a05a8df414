"""Command-line entry point: preprocess | synth | extract-prototypes | train | predict | evaluate | plot.

Exit codes: 0 success, 1 validation failure (including usage errors),
2 I/O failure. ``SEAINTENT_THREADS`` caps BLAS/OpenMP worker threads.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as rc
from .errors import InsufficientData, InvalidArgument, InvalidState, NonFiniteError
from .evaluation import evaluate_items
from .geo import compute_encounter_mask
from .model import IntentionModel
from .plotting import prediction_geojson, prediction_svg, prototypes_geojson
from .preprocess import preprocess_csv
from .scenario_io import INDEX_NAME, DatasetItem, dump_json, load_dataset, read_scenario
from .synthetic import generate, write_corpus
from .training import train_stage1, train_stage2

log = logging.getLogger("seaintent")

THREADS_ENV = "SEAINTENT_THREADS"
REPORT_NAME = "train_report.csv"
PROTOTYPES_NAME = "prototypes.geojson"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; usage errors here are validation failures (1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# Flags mirroring leaf config keys: flag name -> (section, key, type, nargs)
_FLAGS = {
    "seed": (None, "seed", int, None),
    # pipeline
    "gap-threshold-s": ("pipeline", "gap_threshold_s", float, None),
    "min-points": ("pipeline", "min_points", int, None),
    "resample-dt-s": ("pipeline", "resample_dt_s", float, None),
    "region": ("pipeline", "region", float, 4),
    "window-s": ("pipeline", "window_s", float, None),
    "L-o": ("pipeline", "L_o", int, None),
    "L-p": ("pipeline", "L_p", int, None),
    # synth
    "n-scenarios": ("synth", "n_scenarios", int, None),
    "turn-angles": ("synth", "turn_angles", float, "+"),
    "noise-deg": ("synth", "noise_deg", float, None),
    "encounter-fraction": ("synth", "encounter_fraction", float, None),
    # model
    "d": ("model", "d", int, None),
    "C": ("model", "C", int, None),
    "L-d": ("model", "L_d", int, None),
    "hidden": ("model", "hidden", int, "+"),
    "cross-hidden": ("model", "cross_hidden", int, "+"),
    "attn-width": ("model", "attn_width", int, None),
    # train
    "epochs": ("train", "epochs", int, None),
    "lr": ("train", "lr", float, None),
    "milestones": ("train", "milestones", int, "*"),
    "gamma": ("train", "gamma", float, None),
    "lambda1": ("train", "lambda1", float, None),
    "lambda2": ("train", "lambda2", float, None),
    "lambda3": ("train", "lambda3", float, None),
    "alpha": ("train", "alpha", float, None),
    "ae-epochs": ("train", "ae_epochs", int, None),
    "ae-lr": ("train", "ae_lr", float, None),
    "ae-batch": ("train", "ae_batch", int, None),
    "reg-reduction": ("train", "reg_reduction", str, None),
    # sampler
    "k": ("sampler", "k", int, None),
    "n": ("sampler", "n", int, None),
    "epsilon": ("sampler", "epsilon", float, None),
}

_COMMAND_FLAGS = {
    "preprocess": ["seed", "gap-threshold-s", "min-points", "resample-dt-s", "region", "window-s", "L-o", "L-p"],
    "synth": ["seed", "n-scenarios", "turn-angles", "noise-deg", "encounter-fraction", "L-o", "L-p"],
    "extract-prototypes": ["seed", "d", "C", "L-d", "hidden", "cross-hidden", "attn-width", "ae-epochs", "ae-lr",
                           "ae-batch", "region"],
    "train": ["seed", "d", "C", "L-d", "hidden", "cross-hidden", "attn-width", "ae-epochs", "ae-lr", "ae-batch",
              "region", "epochs", "lr", "milestones", "gamma", "lambda1", "lambda2", "lambda3", "alpha",
              "reg-reduction", "epsilon"],
    "predict": ["seed", "k", "n", "epsilon"],
    "evaluate": ["seed", "k", "n", "epsilon"],
    "plot": [],
}


def _add_flags(p: argparse.ArgumentParser, names) -> None:
    p.add_argument("--config", help="JSON run configuration; flags override it")
    for name in names:
        section, key, typ, nargs = _FLAGS[name]
        where = f"{section}.{key}" if section else key
        p.add_argument(f"--{name}", dest=f"cfg__{name}", type=typ, nargs=nargs, default=None, metavar=key.upper(),
                       help=f"overrides {where}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seaintent", description="Multimodal vessel trajectory prediction pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="AIS CSV to scenario files")
    p.add_argument("--input", required=True, help="AIS CSV (mmsi,timestamp,lon,lat,sog,cog)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="labelled synthetic scenarios")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("extract-prototypes", help="stage 1: autoencoder and prototypes")
    p.add_argument("--data", required=True, help="scenario directory")
    p.add_argument("--out", required=True, help="checkpoint directory")

    p = sub.add_parser("train", help="stage 2 (runs stage 1 first without --init)")
    p.add_argument("--data", required=True, help="scenario directory")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--init", help="stage-1 checkpoint from extract-prototypes")

    p = sub.add_parser("predict", help="multimodal forecast for one scenario")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--out", required=True, help="prediction JSON")

    p = sub.add_parser("evaluate", help="best-of-n ADE/FDE over a scenario directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="scenario directory")
    p.add_argument("--out", help="metric report JSON")

    p = sub.add_parser("plot", help="SVG + GeoJSON of a prediction, or prototype GeoJSON")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--prediction", help="prediction JSON")
    src.add_argument("--checkpoint", help="checkpoint whose prototypes are exported")
    p.add_argument("--out", required=True, help="output path stem (.svg / .geojson are added)")

    for name, flags in _COMMAND_FLAGS.items():
        _add_flags(sub.choices[name], flags)
    return parser


def effective_config(args: argparse.Namespace) -> dict:
    cfg = rc.load(getattr(args, "config", None))
    for name, (section, key, _, _) in _FLAGS.items():
        value = getattr(args, f"cfg__{name}", None)
        if value is None:
            continue
        if section is None:
            cfg[key] = value
        else:
            cfg[section][key] = list(value) if isinstance(value, list) else value
    rc.validate(cfg)
    return cfg


# -- commands ---------------------------------------------------------------


def cmd_preprocess(args, cfg) -> int:
    paths = preprocess_csv(args.input, args.out, rc.pipeline_config(cfg), extra_config={"run": cfg})
    print(f"wrote {len(paths)} scenarios to {args.out}")
    return 0


def cmd_synth(args, cfg) -> int:
    scfg = rc.synth_config(cfg)
    paths = write_corpus(args.out, generate(scfg), scfg)
    index = json.loads((Path(args.out) / INDEX_NAME).read_text())
    index["config"]["run"] = cfg
    dump_json(index, Path(args.out) / INDEX_NAME)
    print(f"wrote {len(paths)} synthetic scenarios to {args.out}")
    return 0


def _require_items(data_dir):
    if not Path(data_dir).is_dir():
        raise FileNotFoundError(f"no such directory: {data_dir}")
    items = load_dataset(data_dir)
    if not items:
        raise InvalidArgument(f"no scenarios found in {data_dir}")
    return items


def _region(cfg):
    region = cfg["pipeline"]["region"]
    return tuple(region) if region is not None else None


def _stage1(items, cfg) -> tuple[IntentionModel, list]:
    mcfg = rc.model_config(cfg)
    L_o, L_p = items[0].L_o, items[0].L_p
    if (L_o, L_p) != (mcfg.L_o, mcfg.L_p):
        raise InvalidArgument(f"data has L_o={L_o}, L_p={L_p} but config says {mcfg.L_o}, {mcfg.L_p}")
    model = IntentionModel(mcfg)
    res = train_stage1(model, [it.scenario.coords() for it in items], rc.train_config(cfg), region=_region(cfg))
    log.info("autoencoder loss %.6g -> %.6g", res.history[0], res.history[-1])
    return model, res.labels


def _write_prototypes(model: IntentionModel, path: Path) -> None:
    protos = model.normalizer.to_deg(model.protoset.prototypes.astype(np.float64))
    dump_json(prototypes_geojson(protos), path)


def cmd_extract_prototypes(args, cfg) -> int:
    items = _require_items(args.data)
    model, _ = _stage1(items, cfg)
    model.save(args.out, {"run": cfg})
    _write_prototypes(model, Path(args.out) / PROTOTYPES_NAME)
    print(f"stage-1 checkpoint with {model.protoset.C} prototypes written to {args.out}")
    return 0


def cmd_train(args, cfg) -> int:
    items = _require_items(args.data)
    if args.init:
        model = IntentionModel.load(args.init)
        labels = None
    else:
        model, labels = _stage1(items, cfg)
    tcfg = rc.train_config(cfg)

    def progress(row):
        log.info("epoch %d lr %.3g loss %.6g", row["epoch"], row["lr"], row["loss_total"])

    report = train_stage2(model, [(it.scenario.coords(), it.mask) for it in items], tcfg, labels=labels,
                          callback=progress)
    model.save(args.out, {"run": cfg})
    _write_prototypes(model, Path(args.out) / PROTOTYPES_NAME)
    (Path(args.out) / REPORT_NAME).write_text(report.to_csv())
    last = report.rows[-1] if report.rows else None
    print(f"trained {tcfg.epochs} epochs" + (f", final loss {last['loss_total']:.6g}" if last else ""))
    return 0


def prediction_document(model: IntentionModel, scenario, L_o: int, mask, sampler, cfg) -> dict:
    coords = scenario.coords()
    pred = model.predict(coords[:, :L_o], mask, sampler)
    vessels = []
    for i, tr in enumerate(scenario.trajectories):
        probs = dict(zip(pred.branch_ids[i].tolist(), pred.branch_probs[i].tolist()))
        cands = [{"branch_id": int(b), "branch_prob": probs[int(b)], "points": c.tolist()}
                 for b, c in zip(pred.candidate_branch()[i], pred.flat_candidates()[i])]
        vessels.append({
            "mmsi": tr.mmsi,
            "observed": coords[i, :L_o].tolist(),
            "ground_truth": coords[i, L_o:].tolist() if coords.shape[1] > L_o else None,
            "branch_ids": pred.branch_ids[i].tolist(),
            "branch_probs": pred.branch_probs[i].tolist(),
            "candidates": cands,
        })
    return {"t0": scenario.t0, "dt": scenario.dt, "L_o": L_o, "n": sampler.n, "k": sampler.k,
            "seed": sampler.seed, "mask": np.asarray(mask, dtype=int).tolist(), "vessels": vessels, "config": cfg}


def cmd_predict(args, cfg) -> int:
    model = IntentionModel.load(args.checkpoint)
    scn, L_o, _ = read_scenario(args.scenario)
    mask = compute_encounter_mask(scn.split(L_o)[0])
    doc = prediction_document(model, scn, L_o, mask, rc.sampler_config(cfg), cfg)
    dump_json(doc, args.out)
    print(f"wrote {doc['n']} candidates per vessel for {len(doc['vessels'])} vessels to {args.out}")
    return 0


def cmd_evaluate(args, cfg) -> int:
    data = Path(args.data)
    if not data.is_dir():
        raise FileNotFoundError(f"no such directory: {data}")
    model = IntentionModel.load(args.checkpoint)
    items, missing = [], []
    try:
        items = load_dataset(data)
    except FileNotFoundError as exc:
        # index lists files that are gone: fall back to whatever is readable
        log.warning("%s", exc)
        entries = json.loads((data / INDEX_NAME).read_text())["scenarios"]
        for e in entries:
            try:
                scn, L_o, L_p = read_scenario(data / e["path"])
            except OSError:
                missing.append(e["path"])
                continue
            items.append(DatasetItem(e["path"], scn, np.asarray(e["mask"], dtype=np.uint8), L_o, L_p))
    report = evaluate_items(model, items, rc.sampler_config(cfg), missing, {"run": cfg, "checkpoint": args.checkpoint})
    print(report.table())
    if args.out:
        Path(args.out).write_text(report.to_json())
    if report.empty:
        print(f"error: no scenarios evaluated in {data}", file=sys.stderr)
        return 1
    return 0


def cmd_plot(args, cfg) -> int:
    stem = Path(args.out)
    if stem.suffix in (".svg", ".geojson"):
        stem = stem.with_suffix("")
    if args.prediction:
        doc = json.loads(Path(args.prediction).read_text())
        if not doc.get("vessels"):
            raise InvalidArgument("prediction file has no vessels")
        stem.with_suffix(".svg").write_text(prediction_svg(doc))
        dump_json(prediction_geojson(doc), stem.with_suffix(".geojson"))
        print(f"wrote {stem.with_suffix('.svg')} and {stem.with_suffix('.geojson')}")
    else:
        model = IntentionModel.load(args.checkpoint)
        if model.protoset is None:
            raise InvalidState("checkpoint has no prototypes")
        _write_prototypes(model, stem.with_suffix(".geojson"))
        print(f"wrote {stem.with_suffix('.geojson')}")
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "synth": cmd_synth,
    "extract-prototypes": cmd_extract_prototypes,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "plot": cmd_plot,
}


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return contextlib.nullcontext()

    try:
        n = int(value)
    except ValueError:
        raise InvalidArgument(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    if n < 1:
        raise InvalidArgument(f"{THREADS_ENV} must be >= 1")
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        with _thread_limit():
            return COMMANDS[args.command](args, cfg)
    except (InvalidArgument, InsufficientData, InvalidState, NonFiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
