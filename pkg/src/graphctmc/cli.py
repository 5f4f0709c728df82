"""Command-line entry point: ``dataset``, ``train``, ``sample`` and ``eval`` subcommands.

Exit codes: 0 success, 1 invalid input or configuration, 2 file-system errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .datasets import DatasetSpec, generate_dataset, read_jsonl, split_dataset, write_jsonl
from .graph import fit_size_distribution
from .metrics import REPORT_NAMES, evaluate
from .model import DenoiserModel, ModelConfig
from .noise import UNIFORM, MARGINAL, DiffusionSetup, NoiseSchedule, marginals_from_graphs
from .sampler import SamplerConfig, generate, resolve_setup
from .train import AdamState, Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("graphctmc")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
METRIC_ALIASES = {short: kind for kind, short in REPORT_NAMES.items()}


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# run configuration

# section -> key -> (type, default)
CONFIG_SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "noise": {"alpha": (float, 1.0), "gamma": (float, 5.0), "T": (float, 1.0),
              "reference": (str, MARGINAL)},
    "model": {"layers": (int, 3), "hidden": (int, 64), "dropout": (float, 0.1)},
    "train": {"lr": (float, 2e-4), "weight_decay": (float, 0.0), "batch_size": (int, 8),
              "epochs": (int, 100), "seed": (int, 0)},
    "sample": {"steps": (int, 100), "count": (int, 64), "seed": (int, 0)},
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]] = field(default_factory=lambda: {
        sec: {k: default for k, (_, default) in keys.items()} for sec, keys in CONFIG_SCHEMA.items()
    })

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    def validate(self) -> None:
        noise, model, tr, smp = self["noise"], self["model"], self["train"], self["sample"]
        if noise["reference"] not in (UNIFORM, MARGINAL):
            raise UsageError(f"[noise] reference must be uniform or marginal, got {noise['reference']!r}")
        try:
            NoiseSchedule(noise["alpha"], noise["gamma"], noise["T"])
            ModelConfig(1, 2, model["hidden"], model["layers"], model["dropout"])
            TrainConfig(tr["lr"], tr["weight_decay"], tr["batch_size"], tr["epochs"], tr["seed"])
            SamplerConfig(smp["steps"], smp["count"], smp["seed"])
        except ValueError as exc:
            raise UsageError(f"invalid config: {exc}") from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Read an INI-style file; unknown sections or keys are rejected by name."""
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep key case (``T``)
        with open(path, encoding="utf-8") as fh:
            try:
                parser.read_file(fh)
            except configparser.Error as exc:
                raise UsageError(f"{path}: {exc}") from None
        cfg = cls()
        for section in parser.sections():
            if section not in CONFIG_SCHEMA:
                raise UsageError(f"{path}: unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in CONFIG_SCHEMA[section]:
                    raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
                kind = CONFIG_SCHEMA[section][key][0]
                try:
                    cfg.values[section][key] = kind(raw.strip())
                except ValueError:
                    raise UsageError(f"{path}: [{section}] {key}: cannot parse {raw!r} "
                                     f"as {kind.__name__}") from None
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# subcommands


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def cmd_dataset(args) -> int:
    graphs = generate_dataset(DatasetSpec(args.kind, args.count, args.seed))
    if args.test_out:
        train_set, test_set = split_dataset(graphs, seed=args.seed)
        write_jsonl(train_set, args.out)
        write_jsonl(test_set, args.test_out)
    else:
        write_jsonl(graphs, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for key in ("epochs", "seed"):
        if getattr(args, key) is not None:
            cfg["train"][key] = getattr(args, key)
    cfg.validate()
    graphs = read_jsonl(args.data)
    if not graphs:
        raise UsageError(f"--data {args.data}: no graphs")
    b = 1 + max(int(g.node_types.max()) for g in graphs)
    c = 1 + max(1, max(int(g.edge_types.max()) for g in graphs))
    noise, mc, tc = cfg["noise"], cfg["model"], cfg["train"]
    m_f, m_e = marginals_from_graphs(graphs, b, c)
    sched = NoiseSchedule(noise["alpha"], noise["gamma"], noise["T"])
    setup = DiffusionSetup.build(noise["reference"], b, c, sched, m_f, m_e)
    model = DenoiserModel(ModelConfig(b, c, mc["hidden"], mc["layers"], mc["dropout"]),
                          seed=tc["seed"])
    train_cfg = TrainConfig(tc["lr"], tc["weight_decay"], tc["batch_size"], tc["epochs"], tc["seed"])

    rows = []
    state = train(model, graphs, train_cfg, setup,
                  on_step=lambda step, epoch, loss: rows.append((step, epoch, repr(loss))),
                  max_steps=args.max_steps)
    if args.log:
        with open(args.log, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "epoch", "mean_loss"])
            writer.writerows(rows)
    save_checkpoint(Checkpoint(model, setup, train_cfg, fit_size_distribution(graphs), state.step,
                               (m_f, m_e)), args.out)
    return EXIT_OK


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    setup = resolve_setup(ckpt.setup, args.reference, args.alpha, args.gamma, args.force,
                          ckpt.marginals)
    cfg = SamplerConfig(args.steps, args.num, args.seed, args.nodes)
    graphs = generate(ckpt.model, setup, cfg, ckpt.sizes)
    write_jsonl(graphs, args.out)
    _write_json(str(args.out) + ".meta.json", {
        "seed": args.seed, "steps": args.steps, "num": args.num,
        "checkpoint_sha256": _sha256(args.ckpt), "diffusion": setup.to_dict(),
        "forced": bool(args.force),
    })
    return EXIT_OK


def cmd_eval(args) -> int:
    gen = read_jsonl(args.gen)
    if not gen:
        raise UsageError(f"--gen {args.gen}: empty generated set")
    train_set, test_set = read_jsonl(args.train), read_jsonl(args.test)
    for flag, graphs in (("--train", train_set), ("--test", test_set)):
        if not graphs:
            raise UsageError(f"{flag}: empty graph set")
    kinds = []
    for name in args.metrics.split(","):
        name = name.strip()
        if name not in METRIC_ALIASES:
            raise UsageError(f"--metrics: unknown metric {name!r} "
                             f"(choose from {','.join(METRIC_ALIASES)})")
        kinds.append(METRIC_ALIASES[name])
    report = evaluate(gen, train_set, test_set, kinds)
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphctmc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate a synthetic graph dataset")
    p.add_argument("--kind", choices=["community", "sbm"], required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--test-out", help="also split 80/20 and write the test part here")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a denoiser and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="CSV with step, epoch, mean_loss")
    p.add_argument("--epochs", type=int, help="overrides [train] epochs")
    p.add_argument("--seed", type=int, help="overrides [train] seed")
    p.add_argument("--max-steps", type=int, help="stop after this many optimizer steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate graphs from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--num", type=int, required=True)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--nodes", type=int, help="fixed node count instead of the trained size distribution")
    p.add_argument("--reference", choices=[UNIFORM, MARGINAL])
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--force", action="store_true", help="allow settings that differ from the checkpoint")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score generated graphs against train/test sets")
    p.add_argument("--gen", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default="deg,clus,orbit")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage problems itself
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        name = exc.filename or ""
        print(f"error: {name}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
