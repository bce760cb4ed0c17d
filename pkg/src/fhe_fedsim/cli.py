"""Experiment driver: config parsing, the (arch x mode x seed) grid, and
output management.

Each grid cell writes `<out>/<arch>/<mode>/<seed>/` containing config.json
(the fully resolved configuration), rounds.csv, resources.csv, and
summary.csv; a per-cell summary.csv aggregated across seeds lands in
`<out>/<arch>/<mode>/`. Cells run sequentially so resource measurements
do not interfere. Defaults are desk-scale (8 clients, 10 rounds, 3 local
epochs, 2000 synthetic 32x32 images); the configuration-table scale is
one flag away (--clients 20 --rounds 20 --epochs 10).
"""

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ckks, fed, metrics, nn

ENV_OUT = "FHE_FEDSIM_OUT"

MODES = ("plain", "fhe", "both")


class ConfigError(Exception):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"invalid config field '{field}': {message}")


@dataclass
class ExperimentConfig:
    arch: str = "cnn"
    mode: str = "plain"
    seeds: tuple = (0,)
    clients: int = 8
    rounds: int = 10
    epochs: int = 3
    batch: int = 32
    lr: float = 0.003
    momentum: float = 0.0
    fit_fraction: float = 1.0
    eval_fraction: float = 0.5
    synthetic: str = "2000x32"
    data_dir: str | None = None
    holdout: int | None = None
    out: str | None = None
    ckks_n: int = 8192
    ckks_bits: tuple = (60, 40, 40, 60)
    ckks_scale_log2: int = 40
    sample_period: float = 0.5
    max_workers: int = 1

    def resolved_out(self):
        return Path(self.out or os.environ.get(ENV_OUT) or "runs")

    def validate(self):
        if self.arch != "all" and self.arch not in nn.ARCHITECTURES:
            raise ConfigError("arch", f"{self.arch!r} not in {nn.ARCHITECTURES + ('all',)}")
        if self.mode not in MODES:
            raise ConfigError("mode", f"{self.mode!r} not in {MODES}")
        if not self.seeds:
            raise ConfigError("seeds", "need at least one seed")
        if self.clients < 1:
            raise ConfigError("clients", "must be >= 1")
        if self.rounds < 1:
            raise ConfigError("rounds", "must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs", "must be >= 0")
        if self.batch < 1:
            raise ConfigError("batch", "must be >= 1")
        if not 0 < self.fit_fraction <= 1:
            raise ConfigError("fit_fraction", "must be in (0, 1]")
        if not 0 < self.eval_fraction <= 1:
            raise ConfigError("eval_fraction", "must be in (0, 1]")
        if self.data_dir is None:
            try:
                self.parse_synthetic()
            except ValueError as exc:
                raise ConfigError("synthetic", str(exc)) from exc
        elif not Path(self.data_dir).is_dir():
            raise ConfigError("data_dir", f"{self.data_dir} is not a directory")
        if self.ckks_n < 8 or self.ckks_n & (self.ckks_n - 1):
            raise ConfigError("ckks_n", "must be a power of two >= 8")
        if len(self.ckks_bits) < 2:
            raise ConfigError("ckks_bits", "need at least two prime sizes")
        if not 2 <= self.ckks_scale_log2 <= 60:
            raise ConfigError("ckks_scale_log2", "must be in [2, 60]")
        if self.sample_period <= 0:
            raise ConfigError("sample_period", "must be positive")
        if self.max_workers < 1:
            raise ConfigError("max_workers", "must be >= 1")
        return self

    def parse_synthetic(self):
        """'COUNTxSIZE' or 'COUNT' (size defaults to 32)."""
        spec = str(self.synthetic).lower()
        if "x" in spec:
            count_s, size_s = spec.split("x", 1)
        else:
            count_s, size_s = spec, "32"
        try:
            count, size = int(count_s), int(size_s)
        except ValueError:
            raise ValueError(f"{self.synthetic!r} is not COUNT or COUNTxSIZE")
        if count < 4 or count % 4:
            raise ValueError("synthetic sample count must be a positive multiple of 4")
        if size < 8:
            raise ValueError("synthetic image size must be >= 8")
        return count, size

    def archs(self):
        return nn.ARCHITECTURES if self.arch == "all" else (self.arch,)

    def modes(self):
        return ("plain", "fhe") if self.mode == "both" else (self.mode,)


def _add_args(parser):
    a = parser.add_argument
    a("--config", metavar="FILE", help="JSON config file; flags override its values")
    a("--arch", choices=nn.ARCHITECTURES + ("all",), help="model architecture")
    a("--mode", choices=MODES, help="aggregate in plaintext, under encryption, or both")
    a("--seeds", help="comma-separated run seeds, e.g. 0,7,42")
    a("--clients", type=int, help="number of simulated clients")
    a("--rounds", type=int, help="training rounds")
    a("--epochs", type=int, help="local epochs per round")
    a("--batch", type=int, help="local minibatch size")
    a("--lr", type=float, help="local learning rate")
    a("--momentum", type=float, help="local SGD momentum (default 0)")
    a("--fit-fraction", type=float, dest="fit_fraction",
      help="fraction of clients fitting per round")
    a("--eval-fraction", type=float, dest="eval_fraction",
      help="fraction of clients evaluating per round")
    a("--synthetic", help="synthetic dataset as COUNT or COUNTxSIZE (e.g. 2000x32)")
    a("--data-dir", dest="data_dir", help="image directory (<root>/<class>/*.ftns)")
    a("--holdout", type=int, help="central hold-out sample count (synthetic data)")
    a("--out", help=f"output directory (or ${ENV_OUT}, default ./runs)")
    a("--ckks-n", type=int, dest="ckks_n", help="polynomial degree")
    a("--ckks-bits", dest="ckks_bits", help="comma-separated prime bit sizes")
    a("--ckks-scale-log2", type=int, dest="ckks_scale_log2", help="log2 encoding scale")
    a("--sample-period", type=float, dest="sample_period",
      help="resource sampling period in seconds")
    a("--max-workers", type=int, dest="max_workers",
      help="client worker threads per round (default 1)")


def _parse_int_tuple(text, field):
    try:
        return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v != "")
    except ValueError as exc:
        raise ConfigError(field, f"{text!r} is not a comma-separated integer list") from exc


def load_config(args):
    cfg = ExperimentConfig()
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc}") from exc
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(key, "unknown config key")
            setattr(cfg, key, value)
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "out" or not hasattr(args, f.name):
            continue
        value = getattr(args, f.name)
        if value is not None:
            setattr(cfg, f.name, value)
    if args.out is not None:
        cfg.out = args.out
    if isinstance(cfg.seeds, str):
        cfg.seeds = _parse_int_tuple(cfg.seeds, "seeds")
    cfg.seeds = tuple(int(s) for s in cfg.seeds)
    if isinstance(cfg.ckks_bits, str):
        cfg.ckks_bits = _parse_int_tuple(cfg.ckks_bits, "ckks_bits")
    cfg.ckks_bits = tuple(int(b) for b in cfg.ckks_bits)
    return cfg.validate()


def _dataset_for_seed(cfg, seed):
    """Client pool + central hold-out; identical for plain and fhe cells."""
    if cfg.data_dir is not None:
        images, labels, _ = nn.load_image_dir(cfg.data_dir)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD47A)))
        order = rng.permutation(len(images))
        n_hold = max(len(images) // 5, 1)
        hold, rest = order[:n_hold], order[n_hold:]
        return images[rest], labels[rest], (images[hold], labels[hold])
    count, size = cfg.parse_synthetic()
    images, labels = nn.synthetic_dataset(seed, count, size)
    n_hold = cfg.holdout if cfg.holdout is not None else max(4 * (count // 20), 4)
    if n_hold % 4 or n_hold < 4:
        raise ConfigError("holdout", "must be a positive multiple of 4")
    hx, hy = nn.synthetic_dataset(seed + 990_001, n_hold, size)
    return images, labels, (hx, hy)


def resolved_config_dict(cfg, arch, mode, seed):
    d = dataclasses.asdict(cfg)
    d.update(arch=arch, mode=mode, seed=seed, seeds=list(cfg.seeds),
             ckks_bits=list(cfg.ckks_bits), out=str(cfg.resolved_out()))
    return d


def run_cell(cfg, arch, mode, seed, ckks_context):
    images, labels, holdout = _dataset_for_seed(cfg, seed)
    round_cfg = fed.RoundConfig(
        n_clients=cfg.clients, n_rounds=cfg.rounds, local_epochs=cfg.epochs,
        batch_size=cfg.batch, lr=cfg.lr, momentum=cfg.momentum,
        fit_fraction=cfg.fit_fraction, eval_fraction=cfg.eval_fraction,
        encrypted=(mode == "fhe"), seed=seed, max_workers=cfg.max_workers)
    log = fed.run_experiment(arch, images, labels, round_cfg, holdout=holdout,
                             ckks_context=ckks_context if mode == "fhe" else None,
                             sample_period=cfg.sample_period)
    run_dir = cfg.resolved_out() / arch / mode / str(seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(resolved_config_dict(cfg, arch, mode, seed), indent=2, sort_keys=True) + "\n")
    metrics.write_csv(log, run_dir)
    return log


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fhe-fedsim",
        description="Federated training of small hybrid classical/quantum models "
                    "with optional encrypted parameter aggregation; emits per-round "
                    "time/memory/traffic CSVs.")
    _add_args(parser)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    ckks_context = None
    if "fhe" in cfg.modes():
        ckks_context = ckks.CkksContext.create(
            degree=cfg.ckks_n, bit_sizes=cfg.ckks_bits, scale_log2=cfg.ckks_scale_log2)

    for arch in cfg.archs():
        for mode in cfg.modes():
            cell_records = []
            for seed in cfg.seeds:
                cell = f"arch={arch} mode={mode} seed={seed}"
                try:
                    log = run_cell(cfg, arch, mode, seed, ckks_context)
                except (fed.FedError, nn.DataError, nn.ModelError, ckks.CkksError,
                        OSError) as exc:
                    print(f"error: cell {cell} failed: {exc}", file=sys.stderr)
                    return 1
                cell_records.extend(log.records)
                last = log.records[-1]
                print(f"{cell}: {cfg.rounds} rounds in {log.total_time_s:.1f}s, "
                      f"aggregated accuracy {last.aggregated_accuracy:.4f}")
            metrics.write_summary_csv(
                cell_records, cfg.resolved_out() / arch / mode / "summary.csv")
    return 0


def console_main():
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
