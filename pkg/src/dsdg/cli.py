"""Command-line entry points.

``dsdg`` drives the generator (train-gen, generate); ``fas`` drives the
anti-spoofing side (train, eval, heatmap, verify). Every training command
writes a run directory containing config.snapshot, checkpoints/, and
history.log, and refuses to reuse a directory whose snapshot differs.

Exit codes: 0 success, 1 validation/config error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import data, generator, metrics, oracles, training, uncertainty
from .backbones import BackboneSpec
from .config import RunConfig, config_snapshot, load_run_config
from .errors import ConfigError, NumericError, ValidationError


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); route to exit code 1 instead
        raise ConfigError(message)


def _parse_sets(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load_config(args) -> RunConfig:
    overrides = _parse_sets(getattr(args, "set", []) or [])
    if getattr(args, "manifest", None):
        overrides["data.manifest"] = args.manifest
    if getattr(args, "generated_manifest", None):
        overrides["data.generated_manifest"] = args.generated_manifest
    if getattr(args, "out", None):
        overrides["run.out_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    return load_run_config(getattr(args, "config", None), overrides)


def _prepare_run_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.run_out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    snapshot = config_snapshot(cfg)
    snap_path = out / "config.snapshot"
    if snap_path.exists() and snap_path.read_text(encoding="utf-8") != snapshot:
        raise ConfigError(
            f"{snap_path} exists with a different configuration; refusing to resume"
        )
    snap_path.write_text(snapshot, encoding="utf-8")
    return out


def _write_history(history: list[dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry) + "\n")


# ---------------------------------------------------------------------------
# dsdg commands


def _cmd_train_gen(args) -> None:
    cfg = _load_config(args)
    if not cfg.data_manifest:
        raise ConfigError("data.manifest is required (use --manifest)")
    out = _prepare_run_dir(cfg)
    records = data.load_manifest(cfg.data_manifest)
    pairs = data.build_pairs(records, cfg.data_pairing)
    mode = "unpaired" if cfg.data_pairing == "none" else cfg.gen_mode
    train_cfg = generator.GenTrainConfig(
        steps=cfg.gen_steps,
        batch_size=cfg.gen_batch_size,
        lr=cfg.gen_lr,
        latent_dim=cfg.gen_latent_dim,
        base_width=cfg.gen_base_width,
        n_stages=cfg.gen_stages,
        weights=generator.GenLossWeights(
            mmd=cfg.gen_lambda_mmd,
            pair=cfg.gen_lambda_pair,
            ort=cfg.gen_lambda_ort,
            cls=cfg.gen_lambda_cls,
        ),
        mode=mode,
        seed=cfg.seed,
    )
    model, history = generator.train_generator(pairs, train_cfg)
    generator.save_generator(model, out / "checkpoints" / "generator.pt", config_snapshot(cfg))
    _write_history(history, out / "history.log")
    print(f"trained generator for {cfg.gen_steps} steps -> {out / 'checkpoints' / 'generator.pt'}")


def _cmd_generate(args) -> None:
    model = generator.load_generator(args.ckpt)
    pairs = generator.generate_pairs(model, args.n, args.seed)
    out = Path(args.out)
    manifest = data.write_corpus(pairs, out, prefix="gen")
    print(f"wrote {len(pairs)} generated pairs -> {manifest}")


def dsdg_main(argv=None) -> int:
    parser = _Parser(prog="dsdg", description="paired live/spoof image generator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train-gen", help="train the generator")
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p_train.add_argument("--manifest", default=None)
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.set_defaults(func=_cmd_train_gen)

    p_gen = sub.add_parser("generate", help="sample new pairs from a trained generator")
    p_gen.add_argument("--ckpt", required=True)
    p_gen.add_argument("--n", type=int, required=True)
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=_cmd_generate)

    return _dispatch(parser, argv)


# ---------------------------------------------------------------------------
# fas commands


def _cmd_fas_train(args) -> None:
    cfg = _load_config(args)
    if not cfg.data_manifest:
        raise ConfigError("data.manifest is required (use --manifest)")
    out = _prepare_run_dir(cfg)
    real_pairs = data.build_pairs(data.load_manifest(cfg.data_manifest), cfg.data_pairing)
    gen_pairs = None
    if cfg.data_generated_manifest:
        gen_pairs = data.build_pairs(data.load_manifest(cfg.data_generated_manifest))
    torch.manual_seed(cfg.seed)
    model = uncertainty.DepthUncertaintyModel(
        BackboneSpec(cfg.backbone_kind, cfg.backbone_cdc_theta, cfg.backbone_width)
    )
    train_cfg = training.FasTrainConfig(
        steps=cfg.fas_steps,
        batch_size=cfg.fas_batch_size,
        lr=cfg.fas_lr,
        weights=training.FasLossWeights(cfg.fas_lambda_kl, cfg.fas_lambda_g, cfg.fas_ratio_r),
        seed=cfg.seed,
    )
    history = training.train_fas(model, real_pairs, gen_pairs, train_cfg)
    uncertainty.save_fas_model(model, out / "checkpoints" / "fas.pt", config_snapshot(cfg))
    _write_history(history, out / "history.log")
    print(f"trained depth model for {cfg.fas_steps} steps -> {out / 'checkpoints' / 'fas.pt'}")


def _scores_from_args(args) -> tuple[list[metrics.ScoredSample], list | None]:
    records = None
    if args.manifest:
        records = data.load_manifest(args.manifest)
    if args.scores:
        scores = metrics.read_scores(args.scores)
        if records is not None:
            scores = metrics.attach_spoof_types(scores, records)
        return scores, records
    if not args.ckpt or records is None:
        raise ConfigError("provide --scores, or --ckpt with --manifest to score first")
    model = uncertainty.load_fas_model(args.ckpt)
    samples = []
    for rec in records:
        samples.append(
            training.DepthSample(
                image=data.load_image(rec.image_path),
                depth=data.load_depth(rec.depth_path)
                if rec.depth_path is not None
                else np.zeros((data.DEPTH_SIZE, data.DEPTH_SIZE), np.float32),
                label=rec.label,
                spoof_type_name=rec.spoof_type,
                ref=str(rec.image_path),
            )
        )
    scores = metrics.score_samples(model, samples)
    if args.write_scores:
        metrics.write_scores(scores, args.write_scores)
    return scores, records


def _cmd_fas_eval(args) -> None:
    scores, records = _scores_from_args(args)
    dev_scores = metrics.read_scores(args.dev_scores) if args.dev_scores else None
    result = metrics.run_protocol(args.protocol, scores, dev_scores=dev_scores, records=records)
    text = result.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)


def _cmd_fas_heatmap(args) -> None:
    model = uncertainty.load_fas_model(args.ckpt)
    records = data.load_manifest(args.manifest)
    if args.limit is not None:
        records = records[: args.limit]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        for rec in records:
            image = torch.from_numpy(data.load_image(rec.image_path)).float()
            ud = model(image)
            stem = rec.image_path.stem
            uncertainty.export_sigma_heatmap(
                ud.sigma, out / f"{stem}_sigma.png", out / f"{stem}_sigma.txt"
            )
    print(f"wrote {len(records)} sigma heatmaps -> {out}")


def _cmd_fas_verify(args) -> None:
    kwargs = {}
    if args.quick:
        kwargs = {"n_kl_triples": 4, "mc_samples": 10**5, "n_score_sets": 100}
    results = oracles.run_suite(seed=args.seed, **kwargs)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    if failed:
        raise NumericError(f"{len(failed)} oracle checks failed")
    print("all oracle checks passed")


def fas_main(argv=None) -> int:
    parser = _Parser(prog="fas", description="depth-supervised face anti-spoofing")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the depth model")
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p_train.add_argument("--manifest", default=None)
    p_train.add_argument("--generated-manifest", dest="generated_manifest", default=None)
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.set_defaults(func=_cmd_fas_train)

    p_eval = sub.add_parser("eval", help="evaluate scores or a checkpoint")
    p_eval.add_argument("--scores", default=None)
    p_eval.add_argument("--dev-scores", dest="dev_scores", default=None)
    p_eval.add_argument("--ckpt", default=None)
    p_eval.add_argument("--manifest", default=None)
    p_eval.add_argument("--protocol", default="intra", choices=["intra", "cross_type_loo", "cross_dataset"])
    p_eval.add_argument("--out", default=None)
    p_eval.add_argument("--write-scores", dest="write_scores", default=None)
    p_eval.set_defaults(func=_cmd_fas_eval)

    p_heat = sub.add_parser("heatmap", help="export per-sample sigma heatmaps")
    p_heat.add_argument("--ckpt", required=True)
    p_heat.add_argument("--manifest", required=True)
    p_heat.add_argument("--out", required=True)
    p_heat.add_argument("--limit", type=int, default=None)
    p_heat.set_defaults(func=_cmd_fas_heatmap)

    p_verify = sub.add_parser("verify", help="run the oracle suite")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--quick", action="store_true")
    p_verify.set_defaults(func=_cmd_fas_verify)

    return _dispatch(parser, argv)


def _dispatch(parser: _Parser, argv) -> int:
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(dsdg_main() if Path(sys.argv[0]).name == "dsdg" else fas_main())
