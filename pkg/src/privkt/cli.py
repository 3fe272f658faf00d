"""Command line entry point: ``privkt {pretrain,distill,account,sweep,config-reference}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import SWEEP_AXES, Config, echo, load_config, reference_markdown
from .data import Dataset, SplitSpec, gen_blobs, load_idx, split_with_holdout, standardize
from .errors import ConfigError, UsageError
from .nn import load_net, save_net
from .privacy import DEFAULT_ORDERS, compute_epsilon, privacy_report
from .trainer import TrainConfig, evaluate, pretrain_teacher, run

METRIC_COLUMNS = ["epoch", "l_ds", "l_ds_noisy", "l_ad_d", "l_ad_s",
                  "acc_student", "acc_teacher", "eps", "seconds"]
SWEEP_COLUMNS = ["axis", "value", "seed", "acc_student", "acc_teacher", "epsilon", "delta", "steps"]


# -- pipeline pieces ---------------------------------------------------------------

def load_datasets(cfg: Config) -> tuple[Dataset, Dataset, Dataset]:
    d, seed = cfg["data"], cfg["run"]["seed"]
    if d["source"] == "blobs":
        data = gen_blobs(d["n"], d["n_classes"], d["dim"], d["spread"], seed, d["center_scale"])
    elif d["source"] == "idx":
        for key in ("images", "labels"):
            if d[key] is None:
                raise ConfigError(f"data.{key} is required when data.source = idx", key=f"data.{key}")
            if not Path(d[key]).is_file():
                raise ConfigError(f"data.{key}: file not found: {d[key]}", key=f"data.{key}")
        data = load_idx(d["images"], d["labels"])
    else:
        raise ConfigError(f"data.source must be blobs or idx, got {d['source']!r}", key="data.source")
    spec = SplitSpec(d["private_fraction"], d["n_pub"], d["strip_public_labels"], seed, d["allow_overlap"])
    priv, pub, test = split_with_holdout(data, spec)
    if len(test) == 0:
        raise ConfigError("no rows left for a test set; lower data.n_pub or data.private_fraction",
                          key="data.n_pub")
    if d["standardize"]:
        priv, pub, test = standardize(priv, pub, test)
    return priv, pub, test


def train_config(cfg: Config) -> TrainConfig:
    t = dict(cfg["train"])
    try:
        return TrainConfig(**t, clip=cfg["dp"]["clip"], noise_multiplier=cfg["dp"]["noise_multiplier"],
                           delta=cfg["dp"]["delta"], seed=cfg["run"]["seed"])
    except ConfigError as exc:
        if exc.key and "." not in exc.key:
            section = "dp" if exc.key in cfg["dp"] else "train"
            exc.key = f"{section}.{exc.key}"
        raise


def teacher_path(cfg: Config) -> Path:
    p = cfg["run"]["teacher_checkpoint"]
    return Path(p) if p else Path(cfg["run"]["out_dir"]) / "teacher.json"


def fit_teacher(cfg: Config, priv: Dataset):
    t = cfg["teacher"]
    return pretrain_teacher(priv, hidden=t["hidden"], epochs=t["epochs"], seed=cfg["run"]["seed"],
                            lr=t["lr"], batch_size=t["batch_size"], optimizer=t["optimizer"])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(records, timing: bool) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in records:
        w.writerow([_fmt(r.epoch), _fmt(r.l_ds), _fmt(r.l_ds_noisy), _fmt(r.l_ad_d), _fmt(r.l_ad_s),
                    _fmt(r.acc_student), _fmt(r.acc_teacher), _fmt(r.eps),
                    _fmt(r.seconds) if timing else ""])
    return buf.getvalue()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(cfg: Config, command: str, artifacts: dict[str, Path]) -> dict:
    return {"tool": "privkt", "version": __version__, "command": command,
            "seed": cfg["run"]["seed"], "config": echo(cfg),
            "artifacts": {k: str(v) for k, v in artifacts.items()}}


# -- subcommands -------------------------------------------------------------------

def cmd_pretrain(cfg: Config) -> int:
    out = Path(cfg["run"]["out_dir"])
    priv, _, test = load_datasets(cfg)
    teacher = fit_teacher(cfg, priv)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = teacher_path(cfg)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_net(teacher, ckpt)
    manifest = out / "pretrain_manifest.json"
    _write_json(manifest, _manifest(cfg, "pretrain", {"teacher_checkpoint": ckpt, "manifest": manifest}))
    print(f"teacher checkpoint: {ckpt}")
    print(f"teacher test accuracy: {evaluate(teacher, test):.4f}")
    return 0


def cmd_distill(cfg: Config) -> int:
    ckpt = teacher_path(cfg)
    if not ckpt.is_file():
        print(f"error: teacher checkpoint not found: {ckpt} (run `privkt pretrain` first)", file=sys.stderr)
        return 1
    tcfg = train_config(cfg)
    teacher = load_net(ckpt)
    _, pub, test = load_datasets(cfg)
    result = run(tcfg, teacher, pub, test)
    out = Path(cfg["run"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "teacher_checkpoint": ckpt,
        "student_checkpoint": out / "student.json",
        "metrics_csv": out / "metrics.csv",
        "privacy_json": out / "privacy.json",
        "summary_json": out / "summary.json",
        "manifest": out / "manifest.json",
    }
    save_net(result.student, paths["student_checkpoint"])
    paths["metrics_csv"].write_text(metrics_csv(result.metrics, cfg["run"]["timing"]))
    spend = result.spend
    report = privacy_report(result.dp, result.accountant.state, spend,
                            extra={"sanitize_calls": result.sanitize_calls, "mode": tcfg.mode,
                                   "gan_mode": tcfg.gan_mode,
                                   "floor_hits": sum(m.floor_hits for m in result.metrics)})
    _write_json(paths["privacy_json"], report)
    last = result.metrics[-1]
    _write_json(paths["summary_json"], {
        "epsilon": spend.epsilon, "delta": spend.delta, "order": spend.order,
        "steps": result.accountant.steps, "acc_student": last.acc_student,
        "acc_teacher": last.acc_teacher, "mode": tcfg.mode, "gan_mode": tcfg.gan_mode,
        "config": echo(cfg),
    })
    _write_json(paths["manifest"], _manifest(cfg, "distill", paths))
    print(f"student checkpoint: {paths['student_checkpoint']}")
    print(f"(ε, δ) = ({spend.epsilon!r}, {spend.delta!r})  student accuracy = {last.acc_student:.4f}")
    return 0


def parse_orders(text: str) -> tuple[int, ...]:
    """``"2-128"`` or ``"2,4,8"`` (ranges and lists may be mixed)."""
    out: list[int] = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        lo, dash, hi = part.partition("-")
        try:
            out += list(range(int(lo), int(hi) + 1)) if dash else [int(lo)]
        except ValueError:
            raise UsageError(f"bad order specification {part!r}") from None
    if not out:
        raise UsageError("empty order list")
    return tuple(out)


def cmd_account(q: float, m: float, steps: int, delta: float, orders=DEFAULT_ORDERS,
                as_json: bool = False, stream=None) -> int:
    stream = stream or sys.stdout
    if steps < 0:
        raise UsageError("steps must be >= 0")
    spend, state = compute_epsilon(q, m, steps, delta, orders)
    if as_json:
        print(json.dumps({"q": q, "noise_multiplier": m, "steps": steps, "delta": delta,
                          "orders": list(state.orders), "eps_rdp": list(state.eps_rdp),
                          "epsilon": spend.epsilon, "order": spend.order}, indent=2), file=stream)
        return 0
    conv = np.log(1.0 / delta) / (np.asarray(state.orders) - 1.0)
    print(f"{'order':>6} {'eps_rdp':>14} {'eps(delta)':>14}", file=stream)
    for a, e, c in zip(state.orders, state.eps_rdp, conv):
        print(f"{a:>6d} {e:>14.6g} {e + c:>14.6g}", file=stream)
    print(f"epsilon = {spend.epsilon:.6f} at order {spend.order} (delta = {delta:g}, steps = {steps})",
          file=stream)
    return 0


def _sweep_cell(args) -> dict:
    cfg, axis, value, seed = args
    sec, key = SWEEP_AXES[axis]
    cell = copy.deepcopy(cfg)
    cell[sec][key] = int(value) if key in ("n_pub", "epochs") else float(value)
    cell["run"]["seed"] = int(seed)
    priv, pub, test = load_datasets(cell)
    teacher = fit_teacher(cell, priv)
    result = run(train_config(cell), teacher, pub, test)
    return {"axis": axis, "value": value, "seed": seed,
            "acc_student": result.metrics[-1].acc_student, "acc_teacher": evaluate(teacher, test),
            "epsilon": result.spend.epsilon, "delta": result.spend.delta,
            "steps": result.accountant.steps}


def cmd_sweep(cfg: Config, jobs: int = 1) -> int:
    axis = cfg["sweep"]["axis"].strip()
    if "," in axis or " " in axis:
        raise UsageError(f"a sweep varies exactly one axis, got {axis!r}")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep.axis must be one of {sorted(SWEEP_AXES)}", key="sweep.axis")
    values, seeds = cfg["sweep"]["values"], cfg["sweep"]["seeds"]
    if not values or not seeds:
        raise ConfigError("sweep.values and sweep.seeds must be nonempty", key="sweep.values")
    cells = [(cfg, axis, v, s) for v in values for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    out = Path(cfg["run"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
    (out / "sweep.csv").write_text(buf.getvalue())
    _write_json(out / "sweep_manifest.json",
                _manifest(cfg, "sweep", {"sweep_csv": out / "sweep.csv", "manifest": out / "sweep_manifest.json"}))
    print(f"{axis:>10} {'mean acc':>10} {'epsilon':>10}")
    for v in values:
        cell = [r for r in rows if r["value"] == v]
        print(f"{v:>10g} {np.mean([r['acc_student'] for r in cell]):>10.4f} "
              f"{np.mean([r['epsilon'] for r in cell]):>10.4f}")
    return 0


# -- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="privkt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"privkt {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", nargs="?", help="INI config file (defaults are used if omitted)")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")

    with_config(sub.add_parser("pretrain", help="train the private teacher"))
    with_config(sub.add_parser("distill", help="train a student from the teacher with DP accounting"))
    sp = sub.add_parser("sweep", help="run a one-axis grid of distillation runs")
    with_config(sp)
    sp.add_argument("--jobs", type=int, default=1, help="run cells in parallel worker processes")

    acc = sub.add_parser("account", help="RDP accountant calculator (no training)")
    acc.add_argument("--q", type=float, required=True, help="sampling probability")
    acc.add_argument("--m", type=float, required=True, help="noise multiplier")
    acc.add_argument("--steps", type=int, required=True)
    acc.add_argument("--delta", type=float, default=1e-5)
    acc.add_argument("--orders", default="2-128", help="e.g. 2-128 or 2,4,8,16")
    acc.add_argument("--json", action="store_true")

    ref = sub.add_parser("config-reference", help="print the config key reference (markdown)")
    ref.add_argument("-o", "--output", help="write to this file instead of stdout")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "account":
            return cmd_account(args.q, args.m, args.steps, args.delta, parse_orders(args.orders), args.json)
        if args.command == "config-reference":
            text = reference_markdown()
            if args.output:
                Path(args.output).write_text(text)
            else:
                print(text)
            return 0
        cfg = load_config(args.config, args.overrides)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "distill":
            return cmd_distill(cfg)
        return cmd_sweep(cfg, args.jobs)
    except (ConfigError, UsageError) as exc:
        key = getattr(exc, "key", None)
        print(f"error: {exc}" + (f" [key: {key}]" if key else ""), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
