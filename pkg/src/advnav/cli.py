"""Command-line entry point: ``advnav <command> [options]``.

Commands: gen-data, ingest, train-mle, train-adv, eval, report. A config
file is INI with optional sections [sim], [cost], [model], [train], [eval];
flags override file values. The global seed falls back to ``ADVNAV_SEED``.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from advnav.core import Dataset, DatasetFormatError, TrajectoryParseError, atomic_write, read_dataset, split_dataset
from advnav.core.ethucy import ingest
from advnav.core.io import dataset_to_text
from advnav.cost import CostParams
from advnav.diffkit import CheckpointError, ParamStore, checkpoint_bytes, load_checkpoint
from advnav.evalkit import (
    displacement_table,
    emit_report,
    evaluate,
    format_report,
    matrix_csv,
    parse_matrix_csv,
    parse_report_json,
    parse_table_csv,
    report_json,
    table_csv,
)
from advnav.models import Batch, ModelConfig, collate_dataset
from advnav.sim import SimConfig, episode_collided, generate
from advnav.train import (
    PLAYERS,
    NonFiniteLossError,
    TrainConfig,
    adversarial_train,
    logs_from_csv,
    logs_to_csv,
    make_adv_optimizers,
    restore_optimizer,
    train_mle,
)


class CliError(Exception):
    """An error reported to the user with exit status 1."""


@dataclasses.dataclass(frozen=True)
class EvalConfig:
    split_fraction: float = 0.5
    split_seed: int = 0

    def __post_init__(self):
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must be in (0, 1)")


SECTIONS = {"sim": SimConfig, "cost": CostParams, "model": ModelConfig, "train": TrainConfig, "eval": EvalConfig}
CKPT_SUFFIX = ".ckpt"


def _convert(cls, key: str, raw: str):
    spec = {f.name: f for f in dataclasses.fields(cls)}[key]
    value = spec.default
    raw = raw.strip()
    if "None" in str(spec.type):  # optional float
        return None if raw.lower() in ("", "none") else float(raw)
    if isinstance(value, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(value, int):
        return int(raw)
    if isinstance(value, float):
        return float(raw)
    return raw


@dataclasses.dataclass
class RunConfig:
    """Raw per-section values from the config file plus flag overrides."""

    values: dict = dataclasses.field(default_factory=lambda: {s: {} for s in SECTIONS})

    @classmethod
    def load(cls, path) -> "RunConfig":
        cfg = cls()
        if path is None:
            return cfg
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc.strerror}") from exc
        except configparser.Error as exc:
            raise CliError(f"malformed config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in SECTIONS:
                raise CliError(f"unknown config section [{section}] in {path} (expected one of {sorted(SECTIONS)})")
            known = {f.name for f in dataclasses.fields(SECTIONS[section])}
            for key, raw in parser.items(section):
                if key not in known:
                    raise CliError(f"unknown key {key!r} in section [{section}] of {path}")
                try:
                    cfg.values[section][key] = _convert(SECTIONS[section], key, raw)
                except ValueError as exc:
                    raise CliError(f"bad value for {section}.{key}: {exc}") from exc
        return cfg

    def set(self, section: str, key: str, value) -> None:
        self.values[section][key] = value

    def build(self, section: str):
        try:
            return SECTIONS[section](**self.values[section])
        except (TypeError, ValueError) as exc:
            raise CliError(f"invalid [{section}] config: {exc}") from exc

    def validate(self) -> None:
        for section in SECTIONS:
            self.build(section)

    def effective(self) -> dict:
        return {s: dataclasses.asdict(self.build(s)) for s in SECTIONS}


def _seed(args) -> int | None:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("ADVNAV_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise CliError(f"ADVNAV_SEED must be an integer, got {env!r}") from None


def _sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _read_data(path) -> Dataset:
    try:
        return read_dataset(path)
    except FileNotFoundError:
        raise CliError(f"data file not found: {path}") from None
    except DatasetFormatError as exc:
        raise CliError(f"cannot read dataset {path}: {exc}") from exc


def _split(ds: Dataset, ev: EvalConfig, part: str) -> Dataset:
    """The train or test part; datasets tagged ``all`` are split by the
    [eval] fraction and seed, pre-split files are used whole."""
    if ds.split_tag == "all":
        if len(ds) < 2:
            raise CliError("dataset needs at least 2 episodes to split into train and test")
        train, test = split_dataset(ds, ev.split_fraction, ev.split_seed)
        return train if part == "train" else test
    return ds


def _training_batch(args, rc: RunConfig) -> tuple[Batch, Dataset]:
    ds = _read_data(args.data)
    mcfg = rc.build("model")
    if (ds.H, ds.T) != (mcfg.H, mcfg.T):
        raise CliError(f"dataset has H={ds.H}, T={ds.T} but [model] expects H={mcfg.H}, T={mcfg.T}")
    train = _split(ds, rc.build("eval"), "train")
    batch = collate_dataset(train, mcfg.neighbor_radius)
    if batch.size == 0:
        raise CliError(f"dataset {args.data} has no training windows")
    return batch, ds


def _meta(player: str, rc: RunConfig, data_sha: str) -> dict:
    eff = rc.effective()
    eff["train"].pop("rounds")  # a resumed run must write the same bytes as an uninterrupted one
    return {"player": player, "config": eff, "data_sha256": data_sha}


def _write_ckpt(path: Path, store: ParamStore, step: int, meta: dict, extra: dict | None = None) -> None:
    atomic_write(path, checkpoint_bytes(store, step, meta, extra))


def _load_ckpt(path: Path) -> tuple[ParamStore, dict, dict]:
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {path}") from None
    except CheckpointError as exc:
        raise CliError(f"corrupt checkpoint {path}: {exc}") from exc


def _apply_seed(rc: RunConfig, seed: int | None) -> None:
    if seed is not None:
        rc.set("model", "seed", seed)
        rc.set("train", "seed", seed)


# commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    rc = RunConfig.load(args.config)
    rc.validate()
    if args.episodes < 1:
        raise CliError("episodes must be ≥ 1")
    if args.jobs < 1:
        raise CliError("jobs must be ≥ 1")
    seed = _seed(args) or 0
    sim = rc.build("sim")
    mcfg = rc.build("model")
    records = generate(sim, range(seed, seed + args.episodes), jobs=args.jobs)
    meta = {"generator": "sim", "first_seed": seed, "episodes": args.episodes, "sim": dataclasses.asdict(sim)}
    ds = Dataset(records, "all", mcfg.H, mcfg.T, sim.dt, meta)
    atomic_write(args.out, dataset_to_text(ds))
    contexts = sum(1 for _ in ds.windows(mcfg.neighbor_radius)) if args.episodes <= 50 else \
        collate_dataset(ds, mcfg.neighbor_radius).size
    rate = float(np.mean([episode_collided(r) for r in records]))
    print(f"episodes: {len(records)}  contexts: {contexts}  expert collision rate: {rate:.4f}  "
          f"humans per scene: {sim.n_humans}")
    print(f"wrote {args.out}")
    return 0


def cmd_ingest(args) -> int:
    if args.format != "ethucy":
        raise CliError(f"unsupported format {args.format!r}")
    src = Path(args.input)
    if not src.exists():
        raise CliError(f"input not found: {src}")
    try:
        ds = ingest(src)
    except TrajectoryParseError as exc:
        raise CliError(str(exc)) from exc
    atomic_write(args.out, dataset_to_text(ds))
    n_ctx = sum(1 for _ in ds.windows())
    if n_ctx == 0:
        print(f"warning: empty dataset (no agent track covers {ds.H + ds.T} frames) in {src}", file=sys.stderr)
    print(f"episodes: {len(ds)}  contexts: {n_ctx}  H={ds.H} T={ds.T} dt={ds.dt}")
    print(f"wrote {args.out}")
    return 0


def cmd_train_mle(args) -> int:
    rc = RunConfig.load(args.config)
    _apply_seed(rc, _seed(args))
    rc.validate()
    batch, _ = _training_batch(args, rc)
    mcfg, tcfg, cost = rc.build("model"), rc.build("train"), rc.build("cost")
    log = (lambda s: print(s)) if args.verbose else None
    try:
        theta, psi = train_mle(batch, mcfg, tcfg, cost, log=log)
    except NonFiniteLossError as exc:
        raise CliError(str(exc)) from exc
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sha = _sha256(args.data)
    _write_ckpt(out / f"mle-forecaster{CKPT_SUFFIX}", theta, 0, _meta("mle-forecaster", rc, sha))
    _write_ckpt(out / f"nom-planner{CKPT_SUFFIX}", psi, 0, _meta("nom-planner", rc, sha))
    print(f"trained on {batch.size} contexts; wrote mle-forecaster and nom-planner to {out}")
    return 0


def cmd_train_adv(args) -> int:
    rc = RunConfig.load(args.config)
    _apply_seed(rc, _seed(args))
    if args.lam is not None:
        rc.set("train", "lam", args.lam)
    if args.rounds is not None:
        rc.set("train", "rounds", args.rounds)
    rc.validate()
    init = Path(args.init_dir)
    paths = [init / f"mle-forecaster{CKPT_SUFFIX}", init / f"nom-planner{CKPT_SUFFIX}"]
    missing = [p.name for p in paths if not p.exists()]
    if missing:
        raise CliError(f"missing initial checkpoints {missing} in {init}; run train-mle first")
    batch, _ = _training_batch(args, rc)
    mcfg, tcfg, cost = rc.build("model"), rc.build("train"), rc.build("cost")
    theta, h_f, _ = _load_ckpt(paths[0])
    psi, h_p, _ = _load_ckpt(paths[1])
    for h in (h_f, h_p):
        if h["meta"].get("config", {}).get("model") != dataclasses.asdict(mcfg):
            raise CliError(f"checkpoint model config differs from [model] config: {h['meta'].get('config', {}).get('model')}")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    f_path, p_path = out / f"adv-forecaster{CKPT_SUFFIX}", out / f"safe-planner{CKPT_SUFFIX}"
    log_path = out / "rounds.csv"
    start, prior_logs = 0, []
    opt_f, opt_p = make_adv_optimizers(tcfg)
    if args.resume:
        if not (f_path.exists() and p_path.exists()):
            raise CliError(f"--resume needs adv-forecaster and safe-planner checkpoints in {out}")
        theta, hf, ef = _load_ckpt(f_path)
        psi, hp, ep = _load_ckpt(p_path)
        if hf["step"] != hp["step"]:
            raise CliError("adv-forecaster and safe-planner checkpoints are at different rounds")
        start = hf["step"]
        opt_f = restore_optimizer(tcfg.adv_optimizer, tcfg.lr_forecaster, ef, start)
        opt_p = restore_optimizer(tcfg.adv_optimizer, tcfg.lr_planner, ep, start)
        if log_path.exists():
            prior_logs = logs_from_csv(log_path.read_text())[:start]

    sha = _sha256(args.data)

    def save(done, th, ps, opts, logs):
        _write_ckpt(f_path, th, done, _meta("adv-forecaster", rc, sha), dict(opts[0].state()))
        _write_ckpt(p_path, ps, done, _meta("safe-planner", rc, sha), dict(opts[1].state()))
        atomic_write(log_path, logs_to_csv(prior_logs + logs))

    try:
        theta, psi, logs = adversarial_train(batch, theta, psi, mcfg, tcfg, cost, start_round=start,
                                             rounds=tcfg.rounds, optimizers=(opt_f, opt_p), checkpoint=save)
    except NonFiniteLossError as exc:
        raise CliError(str(exc)) from exc
    if tcfg.rounds == 0:
        save(start, theta, psi, (opt_f, opt_p), [])
    print(f"rounds {start}..{start + tcfg.rounds} done; wrote adv-forecaster, safe-planner and rounds.csv to {out}")
    return 0


def _load_players(ckpt_dir: Path) -> tuple[dict, dict]:
    stores, headers = {}, {}
    for player in PLAYERS:
        path = ckpt_dir / f"{player}{CKPT_SUFFIX}"
        if path.exists():
            stores[player], headers[player], _ = _load_ckpt(path)
    return stores, headers


def cmd_eval(args) -> int:
    rc = RunConfig.load(args.config)
    rc.validate()
    if args.jobs < 1:
        raise CliError("jobs must be ≥ 1")
    ckpt_dir = Path(args.ckpt_dir)
    if not ckpt_dir.is_dir():
        raise CliError(f"checkpoint directory not found: {ckpt_dir}")
    stores, headers = _load_players(ckpt_dir)
    if not stores:
        raise CliError(f"no checkpoints in {ckpt_dir}; run train-mle (and train-adv) first")
    models = {json.dumps(h["meta"]["config"]["model"], sort_keys=True) for h in headers.values()}
    if len(models) != 1:
        raise CliError("checkpoints were trained with different model configs")
    mcfg = ModelConfig(**json.loads(models.pop()))
    ds = _read_data(args.data)
    if (ds.H, ds.T) != (mcfg.H, mcfg.T):
        raise CliError(f"dataset has H={ds.H}, T={ds.T}; checkpoints expect H={mcfg.H}, T={mcfg.T}")
    ev, cost = rc.build("eval"), rc.build("cost")
    test = _split(ds, ev, "test")
    batch = collate_dataset(test, mcfg.neighbor_radius)
    if batch.size == 0:
        raise CliError(f"dataset {args.data} has no evaluation windows")
    pred = predict_all_parallel(batch, stores, mcfg, args.jobs)
    matrix = evaluate(batch, stores, mcfg, cost, predictions=pred)
    table = displacement_table(batch, stores, mcfg, predictions=pred)
    adv = headers.get("adv-forecaster")
    lam = adv["meta"]["config"]["train"]["lam"] if adv else rc.build("train").lam
    provenance = {
        "data": {"path_name": Path(args.data).name, "sha256": _sha256(args.data), "split_tag": ds.split_tag,
                 "evaluated": "test" if ds.split_tag == "all" else ds.split_tag, "contexts": batch.size},
        "checkpoints": {p: {"sha256": _sha256(ckpt_dir / f"{p}{CKPT_SUFFIX}"), "step": headers[p]["step"],
                            "seed": headers[p]["seed"]} for p in stores},
        "epsilon": cost.epsilon,
        "lambda": lam,
        "cost": dataclasses.asdict(cost),
        "eval": dataclasses.asdict(ev),
        "model": dataclasses.asdict(mcfg),
    }
    emit_report(matrix, table, args.out, "both", provenance)
    sys.stdout.write(format_report(matrix, table))
    print(f"wrote {args.out}")
    return 0


def _predict_chunk(payload):
    batch, stores, mcfg = payload
    from advnav.evalkit import predict_all

    return predict_all(batch, stores, mcfg)


def predict_all_parallel(batch: Batch, stores: dict, mcfg: ModelConfig, jobs: int = 1, chunk: int = 1024) -> dict:
    """Predictions computed over fixed-size chunks, optionally in worker
    processes; chunk boundaries never depend on ``jobs``, so the result is
    bit-identical for any worker count."""
    bounds = [(lo, min(lo + chunk, batch.size)) for lo in range(0, batch.size, chunk)]
    payloads = [(batch.take(np.arange(lo, hi)), stores, mcfg) for lo, hi in bounds]
    if jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_predict_chunk, payloads))
    else:
        parts = [_predict_chunk(p) for p in payloads]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _read_report(src: Path):
    if src.is_dir():
        if (src / "report.json").exists():
            src = src / "report.json"
        elif (src / "matrix.csv").exists() and (src / "displacement.csv").exists():
            return (parse_matrix_csv((src / "matrix.csv").read_text()),
                    parse_table_csv((src / "displacement.csv").read_text()), None)
        else:
            raise CliError(f"no report.json or CSV tables in {src}")
    try:
        m, t, d = parse_report_json(src.read_text())
    except FileNotFoundError:
        raise CliError(f"report not found: {src}") from None
    except (ValueError, KeyError) as exc:
        raise CliError(f"cannot parse report {src}: {exc}") from exc
    return m, t, d


def cmd_report(args) -> int:
    m, t, d = _read_report(Path(args.input))
    if args.format == "csv":
        sys.stdout.write(matrix_csv(m))
        sys.stdout.write("\n")
        sys.stdout.write(table_csv(t))
    elif args.format == "json":
        sys.stdout.write(report_json(m, t, d["provenance"] if d else None))
    else:
        sys.stdout.write(format_report(m, t))
        if d:
            for note in d.get("notes", []):
                if f"note: {note}" not in format_report(m, t):
                    print(f"note: {note}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="advnav", description="Adversarial forecaster/planner training for crowd navigation.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="simulate demonstration episodes")
    g.add_argument("--config")
    g.add_argument("--episodes", type=int, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--jobs", type=int, default=1)
    g.set_defaults(func=cmd_gen_data)

    i = sub.add_parser("ingest", help="parse raw pedestrian trajectory files")
    i.add_argument("--input", required=True)
    i.add_argument("--format", default="ethucy", choices=["ethucy"])
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_ingest)

    m = sub.add_parser("train-mle", help="likelihood pretraining of forecaster and planner")
    m.add_argument("--data", required=True)
    m.add_argument("--config")
    m.add_argument("--out-dir", required=True)
    m.add_argument("--seed", type=int)
    m.add_argument("--verbose", action="store_true")
    m.set_defaults(func=cmd_train_mle)

    a = sub.add_parser("train-adv", help="adversarial game starting from the pretrained pair")
    a.add_argument("--data", required=True)
    a.add_argument("--init-dir", required=True)
    a.add_argument("--config")
    a.add_argument("--out-dir", required=True)
    a.add_argument("--rounds", type=int, help="rounds to run in this invocation")
    a.add_argument("--lambda", dest="lam", type=float)
    a.add_argument("--resume", action="store_true", help="continue from the checkpoints in --out-dir")
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_train_adv)

    e = sub.add_parser("eval", help="evaluate checkpoints on held-out contexts")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt-dir", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--config")
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="print an evaluation report")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--format", default="text", choices=["text", "csv", "json"])
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"advnav: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        name = exc.filename if exc.filename else ""
        print(f"advnav: error: {exc.strerror or exc} {name}".rstrip(), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
