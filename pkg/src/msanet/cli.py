"""Command-line entry point: ``python -m msanet <subcommand> ...``.

Exit status is 0 on success, 2 for usage errors, and the ``code`` of the
raised :class:`msanet.errors.MSANetError` otherwise.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, MSANetError, UsageError
from .gradsuite import MODEL_TOL, OP_TOL, run_suite
from .io import (
    list_samples,
    load_weights,
    read_keyvalues,
    read_pfm,
    read_sample,
    save_weights,
    write_keyvalues,
    write_pfm,
    write_ppm,
)
from .metrics import EvalReport, evaluate_pair
from .model import ModelConfig
from .preprocess import tone_map_array
from .synthetic import gen_synthetic
from .training import Sample, TrainConfig, predict, train

log = logging.getLogger("msanet")


def _state_path(weights_path) -> Path:
    return Path(f"{weights_path}.state.txt")


def _guard_output(out, *inputs) -> Path:
    """Refuse to write over any input path (or into an input sample directory)."""
    out = Path(out).resolve()
    for src in inputs:
        if src is None:
            continue
        src = Path(src).resolve()
        if out == src or (src.is_dir() and src in out.parents):
            raise UsageError(f"output {out} would overwrite input {src}")
    return out


def _model_overrides(args) -> dict:
    out = {}
    for flag, key in (("channels", "channels"), ("samples", "num_samples"), ("groups", "num_groups")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    return out


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def _load_samples(data_dir) -> list:
    dirs = list_samples(data_dir)
    if not dirs:
        raise UsageError(f"no sample directories under {data_dir}")
    samples = []
    for d in dirs:
        stack, gt = read_sample(d)
        samples.append(Sample.from_stack(stack, gt, d.name))
    return samples


def _write_state(weights_path, model_config: ModelConfig, train_config: TrainConfig, result) -> None:
    values = {f"model.{k}": v for k, v in model_config.to_dict().items()}
    values.update({f"train.{k}": v for k, v in train_config.to_dict().items()})
    values.update({
        "epochs_done": result.epochs,
        "steps_done": result.steps,
        "optimizer.step": result.optimizer.step,
        "final_loss": f"{result.losses[-1]:.8g}" if result.losses else "nan",
        "seconds": f"{result.seconds:.1f}",
    })
    write_keyvalues(_state_path(weights_path), values)


def _config_for_weights(weights_path, args) -> ModelConfig:
    """Model config from the checkpoint sidecar when present, then CLI overrides."""
    data = {}
    state = _state_path(weights_path)
    if state.exists():
        for k, v in read_keyvalues(state).items():
            if k.startswith("model."):
                data[k[len("model."):]] = _parse_scalar(v)
    data.update(_model_overrides(args))
    return ModelConfig.from_dict(data)


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text in ("True", "False"):
        return text == "True"
    return text


def _train_configs(args, extra_model=None):
    cfg = _load_config(getattr(args, "config", None))
    model = dict(cfg.get("model", {}))
    model.update(extra_model or {})
    model.update(_model_overrides(args))
    trainer = dict(cfg.get("train", {}))
    for flag in ("epochs", "max_steps", "lr_max", "lr_min", "batch_size", "patch", "seed"):
        value = getattr(args, flag, None)
        if value is not None:
            trainer[flag] = value
    return ModelConfig.from_dict(model), TrainConfig.from_dict(trainer)


def _progress(step, epoch, lr, loss):
    if step % 50 == 0:
        log.info("step %d epoch %d lr %.3g loss %.5f", step, epoch, lr, loss)


# -- subcommands ---------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    gen_synthetic(args.out, args.count, args.size, args.max_shift, args.seed)
    print(f"wrote {args.count} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    out = _guard_output(args.out, args.data, args.config)
    model_config, train_config = _train_configs(args)
    samples = _load_samples(args.data)
    result = train(samples, model_config, train_config, callback=_progress)
    save_weights(result.weights, out)
    _write_state(out, model_config, train_config, result)
    print(f"steps {result.steps} final loss {result.losses[-1]:.6f} -> {out}")
    return 0


def cmd_infer(args) -> int:
    out = _guard_output(args.out, args.weights, args.sample)
    tm = _guard_output(args.tonemapped, args.weights, args.sample) if args.tonemapped else None
    config = _config_for_weights(args.weights, args)
    weights = load_weights(args.weights)
    stack, _ = read_sample(args.sample)
    pred = predict(weights, config, [im[0] for im in stack.images], stack.exposure_times)
    write_pfm(out, pred)
    if tm is not None:
        write_ppm(tm, tone_map_array(pred, config.mu))
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    if (args.weights is None) == (args.predictions is None):
        raise UsageError("eval needs exactly one of --weights or --predictions")
    report_path = _guard_output(args.report, args.weights, args.data, args.predictions)
    report = EvalReport()
    if args.weights is not None:
        config = _config_for_weights(args.weights, args)
        weights = load_weights(args.weights)
    for d in list_samples(args.data):
        stack, gt = read_sample(d)
        if args.weights is not None:
            pred = predict(weights, config, [im[0] for im in stack.images], stack.exposure_times)
        else:
            pred = read_pfm(Path(args.predictions) / f"{d.name}.pfm")
        report.add(d.name, evaluate_pair(np.clip(pred, 0, 1), gt[0]))
    if not report.samples:
        raise UsageError(f"no sample directories under {args.data}")
    report_path.write_text(report.to_text())
    mean = report.mean
    print(" ".join(f"{k} {v:.4f}" for k, v in mean.items()))
    return 0


def cmd_gradcheck(args) -> int:
    def show(res):
        status = "ok  " if res.passed else "FAIL"
        print(f"{status} {res.name:<28} max rel err {res.report.max_error:.2e} (tol {res.tol:g})", flush=True)

    results = run_suite(seed=args.seed, tol=args.tol, model_tol=args.model_tol,
                        include_model=not args.skip_model, progress=show)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 0 if not failed else 1


def cmd_ablate(args) -> int:
    report_path = _guard_output(args.report, args.data, args.eval_data, args.config)
    variant = {"fusion_mode": args.mode, "multiscale": not args.no_multiscale, "use_dwt": not args.no_dwt}
    model_config, train_config = _train_configs(args, variant)
    result = train(_load_samples(args.data), model_config, train_config, callback=_progress)
    report = EvalReport()
    for s in _load_samples(args.eval_data):
        pred = predict(result.weights, model_config, s.ldr, s.exposure_times)
        report.add(s.name, evaluate_pair(pred, s.gt))
    header = "".join(f"# {k} = {v}\n" for k, v in model_config.to_dict().items())
    report_path.write_text(header + report.to_text())
    if args.weights_out:
        out = _guard_output(args.weights_out, args.data, args.eval_data)
        save_weights(result.weights, out)
        _write_state(out, model_config, train_config, result)
    mean = report.mean
    print(f"{args.mode} multiscale={variant['multiscale']} dwt={variant['use_dwt']} "
          f"N={model_config.num_samples}: psnr_mu {mean['psnr_mu']:.4f} ssim_mu {mean['ssim_mu']:.4f}")
    return 0


# -- parser --------------------------------------------------------------------

def _model_flags(p):
    p.add_argument("--channels", type=int, help="feature width C")
    p.add_argument("--samples", type=int, help="sampled features per pixel N (2..10 in practice)")
    p.add_argument("--groups", type=int, help="number of Group WaveNets G (1..3)")


def _train_flags(p):
    p.add_argument("--config", help="JSON file with optional 'model' and 'train' objects")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--lr-max", dest="lr_max", type=float)
    p.add_argument("--lr-min", dest="lr_min", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--seed", type=int)
    _model_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msanet", description="Multi-scale alignment HDR network tools")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--max-shift", dest="max_shift", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="weight file to write")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run a model on one sample directory")
    p.add_argument("--weights", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--out", required=True, help="output .pfm")
    p.add_argument("--tonemapped", help="optional mu-law tone-mapped .ppm")
    _model_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--weights")
    p.add_argument("--predictions", help="directory of <sample>.pfm files instead of a model")
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    _model_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--tol", type=float, default=OP_TOL)
    p.add_argument("--model-tol", dest="model_tol", type=float, default=MODEL_TOL)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-model", dest="skip_model", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and score one architecture variant")
    p.add_argument("--mode", choices=("mask", "add", "concat"), default="mask")
    p.add_argument("--no-multiscale", dest="no_multiscale", action="store_true")
    p.add_argument("--no-dwt", dest="no_dwt", action="store_true")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", dest="eval_data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--weights-out", dest="weights_out")
    _train_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except MSANetError as exc:
        print(f"msanet {args.command}: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
