"""Single entry point for data generation, training, evaluation, scoring,
gradient checks, the shortcut experiment, and format validation.

Configuration is a flat ``key=value`` text file; command-line flags
override file values. Every artifact-producing run writes a sorted
config echo next to its outputs so results are reproducible from the
artifacts alone, and no subcommand writes outside its ``--out``
directory. Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from adtr import evaluation, gradcheck, shortcut, synthetic, training
from adtr import model as adtr_model
from adtr.errors import AdtrError, FormatError
from adtr.features import DatasetManifest, load_sample
from adtr.losses import LossConfig, score_map
from adtr.model import ModelConfig, load_checkpoint
from adtr.synthetic import GeneratorConfig
from adtr.training import TrainConfig


def read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise AdtrError(f"{path}:{lineno}: expected key=value")
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise AdtrError(f"cannot read config {path}: {exc}") from exc
    return values


def build_dataclass(cls, values: dict[str, str], aliases: dict[str, str] | None = None):
    """Fill a config dataclass from string key=value pairs, coercing types."""
    aliases = aliases or {}
    by_name = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        name = aliases.get(key, key)
        f = by_name.get(name)
        if f is None:
            continue
        hint = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
        if hint.startswith("int"):
            kwargs[name] = int(raw)
        elif hint.startswith("float"):
            kwargs[name] = float(raw)
        elif hint.startswith("str"):
            kwargs[name] = raw
        # structured fields (tuples, nested configs) are set by the caller
    return cls(**kwargs)


def write_config_echo(out_dir: str, subcommand: str, resolved: dict) -> None:
    lines = [f"subcommand={subcommand}\n"]
    lines += [f"{k}={resolved[k]}\n" for k in sorted(resolved)]
    with open(os.path.join(out_dir, "config_echo.txt"), "w", encoding="utf-8", newline="") as fh:
        fh.writelines(lines)


def _resolve(args, keys: list[str]) -> dict[str, str]:
    """Merge config-file values with flag overrides (flags win)."""
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key in keys:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            values[key] = str(flag)
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    return values


def _require_out(args) -> str:
    out = getattr(args, "out", None)
    if not out:
        raise AdtrError("this subcommand requires --out")
    os.makedirs(out, exist_ok=True)
    return out


def _echo_of(config) -> dict:
    return {f.name: getattr(config, f.name) for f in dataclasses.fields(config)
            if not f.name.startswith("_")}


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    out = _require_out(args)
    values = _resolve(args, [])
    patch_min = int(values.pop("patch_min", 3))
    patch_max = int(values.pop("patch_max", 6))
    finetune_anomalies = int(values.pop("finetune_anomalies", 0))
    config = build_dataclass(GeneratorConfig, values)
    config = dataclasses.replace(config, anomaly_patch=(patch_min, patch_max))
    synthetic.build_benchmark(config, out)
    if finetune_anomalies > 0:
        synthetic.build_finetune_set(config, os.path.join(out, "finetune"), finetune_anomalies)
    echo = _echo_of(config)
    echo["finetune_anomalies"] = finetune_anomalies
    write_config_echo(out, "gen-data", echo)
    return 0


def _infer_grid(manifest: DatasetManifest, data_root: str) -> tuple[int, int, int]:
    entries = manifest.entries
    if not entries:
        raise AdtrError("manifest is empty")
    fm = load_sample(os.path.join(data_root, entries[0].path)).features
    return fm.channels, fm.height, fm.width


def _load_manifest(args) -> tuple[DatasetManifest, str]:
    if not getattr(args, "manifest", None):
        raise AdtrError("this subcommand requires --manifest")
    manifest = DatasetManifest.load(args.manifest)
    return manifest, os.path.dirname(os.path.abspath(args.manifest))


def _build_model_config(values: dict[str, str], channels: int, height: int, width: int) -> ModelConfig:
    config = build_dataclass(ModelConfig, values)
    return dataclasses.replace(config, in_channels=int(values.get("in_channels", channels)),
                               height=int(values.get("height", height)),
                               width=int(values.get("width", width)))


def _build_train_config(values: dict[str, str]) -> TrainConfig:
    loss = build_dataclass(LossConfig, values, aliases={"topk": "k", "pool-window": "pool_window"})
    config = build_dataclass(TrainConfig, values, aliases={"lr": "lr_initial", "loss": "loss_kind"})
    return dataclasses.replace(config, loss=loss)


def cmd_train(args) -> int:
    out = _require_out(args)
    manifest, data_root = _load_manifest(args)
    values = _resolve(args, ["variant", "epochs", "lr", "loss", "alpha", "topk", "pool-window"])
    model_config = _build_model_config(values, *_infer_grid(manifest, data_root))
    train_config = _build_train_config(values)
    if train_config.loss_kind != "norm":
        raise AdtrError("train is the normal-sample-only protocol (loss norm); use finetune for px/img")
    checkpoint = os.path.join(out, "checkpoint.adtrck")
    trace = os.path.join(out, "trace.tsv")
    if os.path.exists(trace):
        os.remove(trace)
    training.fit(manifest, data_root, model_config, train_config,
                 checkpoint_path=checkpoint, trace_path=trace)
    echo = {**_echo_of(model_config), **_echo_of(train_config), **_echo_of(train_config.loss)}
    echo["loss"] = train_config.loss_kind
    write_config_echo(out, "train", echo)
    return 0


def cmd_finetune(args) -> int:
    out = _require_out(args)
    manifest, data_root = _load_manifest(args)
    if not args.checkpoint:
        raise AdtrError("finetune requires --checkpoint")
    params, model_config = load_checkpoint(args.checkpoint)
    values = _resolve(args, ["epochs", "lr", "loss", "alpha", "topk", "pool-window"])
    values.setdefault("loss", "px")
    values.setdefault("epochs", "60")
    values.setdefault("lr_drop_epoch", str(max(1, int(values["epochs"]) * 2 // 3)))
    if "lr" not in values:
        # gentler default than fresh training; the loaded model is near a minimum
        values.setdefault("lr_initial", "0.001")
    train_config = _build_train_config(values)
    if train_config.loss_kind == "norm":
        raise AdtrError("finetune expects --loss px or img")
    checkpoint = os.path.join(out, "finetuned.adtrck")
    trace = os.path.join(out, "trace.tsv")
    if os.path.exists(trace):
        os.remove(trace)
    training.fit(manifest, data_root, model_config, train_config,
                 checkpoint_path=checkpoint, trace_path=trace, initial_params=params)
    echo = {**_echo_of(model_config), **_echo_of(train_config), **_echo_of(train_config.loss)}
    echo["loss"] = train_config.loss_kind
    echo["loaded_checkpoint"] = os.path.basename(args.checkpoint)
    write_config_echo(out, "finetune", echo)
    return 0


def cmd_eval(args) -> int:
    out = _require_out(args)
    manifest, data_root = _load_manifest(args)
    if not args.checkpoint:
        raise AdtrError("eval requires --checkpoint")
    params, model_config = load_checkpoint(args.checkpoint)
    values = _resolve(args, ["alpha", "topk", "pool-window"])
    loss_config = build_dataclass(LossConfig, values, aliases={"topk": "k", "pool-window": "pool_window"})
    seed = int(values.get("seed", 0))
    echo = {**_echo_of(model_config), **_echo_of(loss_config), "seed": seed}
    report = evaluation.evaluate(manifest, data_root, params, model_config, loss_config,
                                 seed=seed, config_echo={k: str(v) for k, v in sorted(echo.items())})
    report.save(os.path.join(out, "report.json"))
    write_config_echo(out, "eval", echo)
    if report.timing_seconds is not None:
        print(f"evaluated {len(report.per_sample)} samples in {report.timing_seconds:.2f}s", file=sys.stderr)
    print(f"image_auroc={report.image_auroc:.6f} pixel_auroc="
          f"{'n/a' if report.pixel_auroc is None else f'{report.pixel_auroc:.6f}'}")
    return 0


def cmd_score(args) -> int:
    out = _require_out(args)
    if not args.checkpoint or not args.sample:
        raise AdtrError("score requires --checkpoint and --sample")
    params, model_config = load_checkpoint(args.checkpoint)
    record = load_sample(args.sample)
    reconstruction = adtr_model.forward(record.features, params, model_config)
    s = score_map(record.features.values - reconstruction.values)
    evaluation.export_score_map(s, os.path.join(out, "score_map.pgm"))
    values = _resolve(args, [])
    echo = {**_echo_of(model_config), "sample": os.path.basename(args.sample),
            "seed": int(values.get("seed", 0))}
    write_config_echo(out, "score", echo)
    return 0


def cmd_grad_check(args) -> int:
    seed = args.seed if args.seed is not None else 0
    results = gradcheck.run_all(seed=seed, probes=args.probes)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: max_rel_err={r.max_error:.3e} tol={r.tolerance:.0e}")
        failed += 0 if r.passed else 1
    if failed:
        print(f"{failed} gradient checks failed", file=sys.stderr)
        return 1
    return 0


def cmd_shortcut_exp(args) -> int:
    out = _require_out(args)
    values = _resolve(args, [])
    config = build_dataclass(shortcut.ShortcutConfig, values)
    report = shortcut.run_experiment(config)
    with open(os.path.join(out, "shortcut_report.json"), "w", encoding="utf-8", newline="") as fh:
        fh.write(report.to_json())
    write_config_echo(out, "shortcut-exp", _echo_of(config))
    affine = "inf" if report.affine_ratio_infinite else f"{report.affine_ratio:.3f}"
    attn = "inf" if report.attention_ratio_infinite else f"{report.attention_ratio:.3f}"
    print(f"affine_ratio={affine} attention_ratio={attn}")
    return 0


def cmd_validate(args) -> int:
    path = args.path
    try:
        if path.endswith(".tsv"):
            manifest = DatasetManifest.load(path)
            manifest.validate(os.path.dirname(os.path.abspath(path)))
            print(f"ok: manifest with {len(manifest.entries)} valid entries")
        else:
            record = load_sample(path)
            fm = record.features
            print(f"ok: C={fm.channels} H={fm.height} W={fm.width} "
                  f"mask={'yes' if record.pixel_mask is not None else 'no'} "
                  f"label={record.image_label if record.image_label is not None else 'no'}")
    except FormatError as exc:
        print(f"invalid ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adtr", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, manifest=False, checkpoint=False):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help="output directory (all writes stay inside)")
        p.add_argument("--seed", type=int, help="random seed override")
        if manifest:
            p.add_argument("--manifest", help="dataset manifest path")
        if checkpoint:
            p.add_argument("--checkpoint", help="model checkpoint path")

    common(sub.add_parser("gen-data", help="write the synthetic benchmark"))

    p = sub.add_parser("train", help="fit on the train split with the reconstruction loss")
    common(p, manifest=True)
    p.add_argument("--variant", choices=adtr_model.VARIANTS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--loss", choices=["norm"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--topk", type=int)
    p.add_argument("--pool-window", type=int)

    p = sub.add_parser("finetune", help="load a checkpoint, then fit with px or img loss")
    common(p, manifest=True, checkpoint=True)
    p.add_argument("--loss", choices=["px", "img"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--topk", type=int)
    p.add_argument("--pool-window", type=int)

    p = sub.add_parser("eval", help="score the test split and write a report")
    common(p, manifest=True, checkpoint=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--topk", type=int)
    p.add_argument("--pool-window", type=int)

    p = sub.add_parser("score", help="export the score map of one sample")
    common(p, checkpoint=True)
    p.add_argument("--sample", help="sample file to score")

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int)
    p.add_argument("--probes", type=int, default=100)

    common(sub.add_parser("shortcut-exp", help="1-layer reconstructor comparison"))

    p = sub.add_parser("validate", help="check a sample file or manifest")
    p.add_argument("path", help=".adtrft sample or .tsv manifest")
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "score": cmd_score,
    "grad-check": cmd_grad_check,
    "shortcut-exp": cmd_shortcut_exp,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.subcommand](args)
    except AdtrError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
