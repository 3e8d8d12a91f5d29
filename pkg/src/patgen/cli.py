"""``patgen`` command line: encode/decode, train, sample, legalize, drc, augment, stats, render, toy.

Exit codes: 0 success, 1 validation error (bad input, DRC violations), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import deepsquish, denoiser, diffusion, drc, geometry, legalize, patops, toy
from .rules import TOY_RULES, DesignRules

log = logging.getLogger("patgen")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


# -- configuration -------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleConfig:
    K: int = 1000
    beta1: float = 0.01
    betaK: float = 0.5
    m: int = 10

    def build(self) -> diffusion.NoiseSchedule:
        return diffusion.linear_beta_schedule(self.K, self.beta1, self.betaK)


@dataclass(frozen=True)
class EncodingConfig:
    size: int = 16
    channels: int = 16


@dataclass(frozen=True)
class LegalizeConfig:
    strategy: str = "R"
    B: int = 4
    attempts: int = 3
    max_iters: int = 300
    max_time: float = 2.0


@dataclass(frozen=True)
class IoConfig:
    data: str | None = None
    out: str | None = None
    checkpoint: str | None = None
    library: str | None = None


def _default_model() -> denoiser.TrainConfig:
    return denoiser.TrainConfig()


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    rules: DesignRules = TOY_RULES
    model: denoiser.TrainConfig = field(default_factory=_default_model)
    augment: patops.AugmentConfig = field(default_factory=patops.AugmentConfig)
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    legalize: LegalizeConfig = field(default_factory=LegalizeConfig)
    io: IoConfig = field(default_factory=IoConfig)


_SECTIONS = {
    "schedule": ScheduleConfig,
    "model": denoiser.TrainConfig,
    "augment": patops.AugmentConfig,
    "encoding": EncodingConfig,
    "legalize": LegalizeConfig,
    "io": IoConfig,
}


def _section(cls, doc, name):
    if not isinstance(doc, dict):
        raise CliError(f"config: '{name}' must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise CliError(f"config: unknown keys in '{name}': {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise CliError(f"config: invalid '{name}': {exc}") from exc


def load_config(path: str | None) -> RunConfig:
    """Read a JSON run config; unspecified keys keep their defaults, unknown keys are errors."""
    cfg = RunConfig()
    if not path:
        return cfg
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror}") from exc
    if not isinstance(doc, dict):
        raise CliError(f"{path}: top level must be an object")
    unknown = set(doc) - {"seed", "rules", *_SECTIONS}
    if unknown:
        raise CliError(f"{path}: unknown config keys {sorted(unknown)}")
    updates = {}
    for name, cls in _SECTIONS.items():
        if name in doc:
            updates[name] = _section(cls, doc[name], name)
    if "rules" in doc:
        try:
            updates["rules"] = DesignRules.from_dict(doc["rules"])
        except (TypeError, ValueError) as exc:
            raise CliError(f"{path}: rules: {exc}") from exc
    if "seed" in doc:
        if not isinstance(doc["seed"], int) or doc["seed"] < 0:
            raise CliError(f"{path}: seed must be a non-negative integer")
        updates["seed"] = doc["seed"]
    return replace(cfg, **updates)


def resolve_seed(flag: int | None, cfg: RunConfig, config_given: bool) -> int:
    """Flag, then config file, then ``PATGEN_SEED``, then 0."""
    if flag is not None:
        return flag
    if config_given:
        return cfg.seed
    env = os.environ.get("PATGEN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise CliError(f"PATGEN_SEED is not an integer: {env!r}") from exc
    return cfg.seed


def _rules(args, cfg: RunConfig) -> DesignRules:
    if getattr(args, "rules", None):
        try:
            return DesignRules.from_json(Path(args.rules).read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.rules}:{exc.lineno}: {exc.msg}") from exc
        except (TypeError, ValueError) as exc:
            raise CliError(f"{args.rules}: {exc}") from exc
    return cfg.rules


# -- file helpers --------------------------------------------------------------------


def _out_dir(path: str | None, default: str) -> Path:
    out = Path(path or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tensor_files(path: str) -> list[Path]:
    p = Path(path)
    if p.is_file():
        return [p]
    if not p.is_dir():
        raise CliError(f"{path}: no such file or directory")
    return sorted(p.glob("*.dsqt"))


def _load_tensors(path: str) -> list[tuple[str, deepsquish.TopologyTensor]]:
    return [(f.stem, deepsquish.load(f)) for f in _tensor_files(path)]


def _load_layout(path: str | Path) -> geometry.Layout:
    return geometry.layout_from_json(Path(path).read_text())


def _layout_files(path: str) -> list[Path]:
    p = Path(path)
    if p.is_file():
        return [p]
    if not p.is_dir():
        raise CliError(f"{path}: no such file or directory")
    return sorted(f for f in p.glob("*.json") if not f.name.startswith("_"))


def write_deltas(sq: geometry.SquishPattern) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "index", "delta_nm"])
    for axis, vec in (("x", sq.dx), ("y", sq.dy)):
        for i, v in enumerate(vec):
            w.writerow([axis, i, repr(float(v * sq.unit_scale))])
    return buf.getvalue()


def read_deltas(text: str, name: str = "<deltas>") -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["axis", "index", "delta_nm"]:
        raise CliError(f"{name}:1: expected header 'axis,index,delta_nm'")
    vals: dict[str, dict[int, float]] = {"x": {}, "y": {}}
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            axis, idx, value = row
            vals[axis][int(idx)] = float(value)
        except (ValueError, KeyError) as exc:
            raise CliError(f"{name}:{lineno}: bad row {row!r}") from exc
    out = []
    for axis in ("x", "y"):
        d = vals[axis]
        if sorted(d) != list(range(len(d))):
            raise CliError(f"{name}: {axis} indices are not contiguous from 0")
        out.append(np.array([d[i] for i in range(len(d))]))
    return out[0], out[1]


def _run_ordered(fn: Callable, items: Sequence, jobs: int) -> list:
    """Map ``fn`` over ``items``; results keep input order whatever the completion order."""
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _median(values) -> float | None:
    return float(np.median(values)) if len(values) else None


# -- commands ------------------------------------------------------------------------


def cmd_encode(args, cfg: RunConfig) -> int:
    lay = _load_layout(args.layout)
    sq = geometry.encode_squish(lay)
    size = args.size if args.size is not None else max(sq.shape)
    channels = args.channels if args.channels is not None else 1
    padded = geometry.pad_to_square(sq, size)
    stem = Path(args.output) if args.output else Path(args.layout).with_suffix("")
    stem.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{stem}.topo").write_text(geometry.topology_to_text(padded.topology))
    Path(f"{stem}.deltas.csv").write_text(write_deltas(padded))
    deepsquish.save(f"{stem}.dsqt", deepsquish.fold(padded.topology, channels))
    print(f"{stem}.dsqt: {size}x{size} topology, {channels} channel(s)")
    return EXIT_OK


def cmd_decode(args, cfg: RunConfig) -> int:
    src = Path(args.topology)
    if src.suffix == ".dsqt":
        topo = deepsquish.unfold(deepsquish.load(src))
    else:
        topo = geometry.topology_from_text(src.read_text())
    dx, dy = read_deltas(Path(args.deltas).read_text(), args.deltas)
    lay = geometry.decode_squish(geometry.SquishPattern(topo, dx, dy))
    text = geometry.layout_to_json(lay)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_toy(args, cfg: RunConfig) -> int:
    out = _out_dir(args.out, "toy")
    channels = args.channels if args.channels is not None else cfg.encoding.channels
    layouts = toy.toy_layouts(args.count, args.seed if args.seed is not None else 2024)
    for i, lay in enumerate(layouts):
        sq = geometry.pad_to_square(geometry.encode_squish(lay), toy.SIDE)
        (out / f"toy_{i:05d}.json").write_text(geometry.layout_to_json(lay))
        deepsquish.save(out / f"toy_{i:05d}.dsqt", deepsquish.fold(sq.topology, channels))
    print(f"wrote {len(layouts)} toy patterns to {out}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig, seed: int) -> int:
    data = [t for _, t in _load_tensors(args.data)]
    if not data:
        raise CliError(f"{args.data}: no .dsqt tensors found")
    tcfg = cfg.model
    if args.iterations is not None:
        tcfg = replace(tcfg, iterations=args.iterations)
    tcfg = replace(tcfg, seed=seed)
    sched = cfg.schedule.build()
    result = denoiser.train(data, tcfg, sched)
    extra = {"schedule": asdict(cfg.schedule), "train": asdict(tcfg)}
    Path(args.out).write_bytes(denoiser.checkpoint_bytes(result.params, extra))
    first = float(np.mean(result.losses[:10]))
    last = float(np.mean(result.losses[-10:]))
    print(f"trained {tcfg.iterations} iterations: loss {first:.5f} -> {last:.5f}")
    return EXIT_OK


def _sampler(args, cfg: RunConfig):
    """Denoiser plus tensor shape from ``--checkpoint`` or ``--bayes``."""
    if bool(args.checkpoint) == bool(args.bayes):
        raise CliError("give exactly one of --checkpoint or --bayes")
    if args.checkpoint:
        params, _ = denoiser.checkpoint_from_bytes(Path(args.checkpoint).read_bytes())
        return denoiser.NetDenoiser(params), params.config.channels, params.config.size
    data = [t for _, t in _load_tensors(args.bayes)]
    if not data:
        raise CliError(f"{args.bayes}: no .dsqt tensors found")
    return denoiser.BayesDenoiser(data, cfg.schedule.build()), data[0].channels, data[0].size


def cmd_sample(args, cfg: RunConfig, seed: int) -> int:
    sched_cfg = cfg.schedule if args.m is None else replace(cfg.schedule, m=args.m)
    sched = sched_cfg.build()
    den, C, M = _sampler(args, cfg)
    out = _out_dir(args.out, "samples")
    calls = diffusion.denoiser_calls(sched.K, sched_cfg.m)

    def one(i):
        t0 = time.perf_counter()
        x = diffusion.sample(den, C, M, sched, sched_cfg.m, diffusion.make_rng(seed + i))
        return x, (time.perf_counter() - t0) * 1e6

    results = _run_ordered(one, range(args.count), args.jobs)
    items = []
    for i, (x, us) in enumerate(results):
        name = f"sample_{i:05d}.dsqt"
        deepsquish.save(out / name, deepsquish.TopologyTensor(x))
        items.append({"file": name, "seed": seed + i, "wall_us": round(us, 1), "denoiser_calls": calls})
    manifest = {
        "count": args.count, "K": sched.K, "m": sched_cfg.m, "seed": seed,
        "median_wall_us": _median([it["wall_us"] for it in items]),
        "mean_wall_us": float(np.mean([it["wall_us"] for it in items])) if items else None,
        "items": items,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {args.count} samples to {out}")
    return EXIT_OK


def cmd_legalize(args, cfg: RunConfig, seed: int) -> int:
    rules = _rules(args, cfg)
    strategy = args.strategy or cfg.legalize.strategy
    if strategy not in ("R", "E", "D"):
        raise CliError(f"unknown strategy {strategy!r}")
    tensors = _load_tensors(args.tensors)
    library = []
    if strategy == "E":
        if args.library:
            pats = [geometry.encode_squish(_load_layout(f)) for f in _layout_files(args.library)]
            side = max(t.side for _, t in tensors) if tensors else toy.SIDE
            pats = [geometry.pad_to_square(p, side) for p in pats if max(p.shape) <= side]
            library = legalize.library_vectors(pats, rules.for_side(side).total_extent)
        else:
            log.warning("strategy E without --library; falling back to random initialization")
    out = _out_dir(args.out, "layouts")
    lcfg = cfg.legalize
    budget = legalize.Budget(lcfg.max_iters, lcfg.max_time)

    def one(item):
        i, (name, tensor) = item
        topo = deepsquish.unfold(tensor)
        t0 = time.perf_counter()
        res = legalize.legalize_pattern(
            topo, rules, strategy, diffusion.make_rng(seed + i), library=library,
            budget=budget, attempts=lcfg.attempts, B=lcfg.B,
        )
        return name, res, (time.perf_counter() - t0) * 1e6

    rows = []
    for name, res, us in _run_ordered(one, list(enumerate(tensors)), args.jobs):
        row = {"name": name, "outcome": "discarded", "solve_us": round(us, 1), "attempts": 0, "drc_clean": None}
        if res is not None:
            (out / f"{name}.json").write_text(geometry.layout_to_json(res.layout))
            clean = drc.check(res.layout, rules.for_side(max(res.pattern.shape))).clean
            row.update(outcome="legal" if clean else "illegal", attempts=res.attempts, drc_clean=clean)
        rows.append(row)
    kept = [r for r in rows if r["outcome"] != "discarded"]
    times = [r["solve_us"] for r in rows]
    summary = {
        "strategy": strategy, "count": len(rows), "kept": len(kept),
        "discard_rate": (len(rows) - len(kept)) / len(rows) if rows else 0.0,
        "legality_rate": sum(r["outcome"] == "legal" for r in kept) / len(kept) if kept else None,
        "median_solve_us": _median(times),
        "mean_solve_us": float(np.mean(times)) if times else None,
    }
    (out / "_report.json").write_text(json.dumps({"summary": summary, "items": rows}, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK if all(r["outcome"] != "illegal" for r in rows) else EXIT_RUNTIME


def cmd_drc(args, cfg: RunConfig) -> int:
    rules = _rules(args, cfg)
    dirty = 0
    for f in _layout_files(args.layout):
        lay = _load_layout(f)
        side = args.side or cfg.encoding.size
        report = drc.check(lay, rules.for_side(side))
        sys.stdout.write(report.to_jsonl())
        dirty += not report.clean
    return EXIT_INVALID if dirty else EXIT_OK


def cmd_augment(args, cfg: RunConfig, seed: int) -> int:
    rules = _rules(args, cfg)
    tensors = _load_tensors(args.tensors)
    topos = [deepsquish.unfold(t) for _, t in tensors]
    out = _out_dir(args.out, "augmented")
    rng = diffusion.make_rng(seed)
    n = 0
    for (name, tensor), topo in zip(tensors, topos):
        for j, cand in enumerate(patops.augment(topo, cfg.augment, rules, rng, topos)):
            deepsquish.save(out / f"{name}_aug{j}.dsqt", deepsquish.fold(cand, tensor.channels))
            n += 1
    print(f"accepted {n} augmented topologies from {len(topos)} sources")
    return EXIT_OK


def _library_items(path: str) -> list:
    """Topologies of the tensors in ``path``, or its layouts when it holds no tensors."""
    p = Path(path)
    if p.suffix == ".json" or (p.is_dir() and not any(p.glob("*.dsqt"))):
        return [geometry.encode_squish(_load_layout(f)) for f in _layout_files(path)]
    return [deepsquish.unfold(t) for _, t in _load_tensors(path)]


def cmd_stats(args, cfg: RunConfig) -> int:
    items = _library_items(args.library)
    if not items:
        raise CliError(f"{args.library}: library is empty")
    stats = patops.complexity_histogram(items)
    if args.csv:
        Path(args.csv).write_text(stats.to_csv())
    text = stats.to_json()
    if args.json:
        Path(args.json).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_render(args, cfg: RunConfig) -> int:
    out = _out_dir(args.out, "svg")
    files = _layout_files(args.layout)
    for f in files:
        (out / f"{f.stem}.svg").write_text(geometry.render_svg(_load_layout(f)))
    print(f"rendered {len(files)} layout(s) to {out}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patgen", description="Layout pattern generation with discrete diffusion")
    parser.add_argument("--config", help="JSON run config; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="layout JSON -> topology, deltas CSV and DSQT tensor")
    p.add_argument("layout")
    p.add_argument("--size", type=int, help="pad to a size x size topology (default: no padding beyond square)")
    p.add_argument("--channels", type=int, help="tensor channels, a perfect square (default 1)")
    p.add_argument("-o", "--output", help="output path stem")

    p = sub.add_parser("decode", help="topology (.topo or .dsqt) + deltas CSV -> layout JSON")
    p.add_argument("topology")
    p.add_argument("--deltas", required=True)
    p.add_argument("-o", "--output")

    p = sub.add_parser("toy", help="write the bundled toy library")
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--seed", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--out")

    p = sub.add_parser("train", help="train the denoiser on a directory of tensors")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint file")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("sample", help="generate topology tensors")
    p.add_argument("--checkpoint")
    p.add_argument("--bayes", help="directory of tensors for the exact denoiser")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--m", type=int, help="reverse steps per denoiser call")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("legalize", help="assign legal geometry to tensors")
    p.add_argument("tensors")
    p.add_argument("--rules")
    p.add_argument("--strategy", choices=["R", "E", "D"])
    p.add_argument("--library", help="directory of layout JSON files for strategy E")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("drc", help="check layouts; violations as JSON lines")
    p.add_argument("layout", help="layout JSON file or directory")
    p.add_argument("--rules")
    p.add_argument("--side", type=int, help="topology side the normalized rules refer to (default: encoding.size)")

    p = sub.add_parser("augment", help="gated augmentation of a tensor directory")
    p.add_argument("tensors")
    p.add_argument("--rules")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("stats", help="complexity histogram and diversity of a library")
    p.add_argument("library", help="directory of .dsqt and/or layout JSON files")
    p.add_argument("--csv")
    p.add_argument("--json")

    p = sub.add_parser("render", help="one SVG per layout")
    p.add_argument("layout")
    p.add_argument("--out")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config)
        seeded = {"train": cmd_train, "sample": cmd_sample, "legalize": cmd_legalize, "augment": cmd_augment}
        plain = {"encode": cmd_encode, "decode": cmd_decode, "toy": cmd_toy, "drc": cmd_drc,
                 "stats": cmd_stats, "render": cmd_render}
        if args.command in seeded:
            seed = resolve_seed(args.seed, cfg, bool(args.config))
            return seeded[args.command](args, cfg, seed)
        return plain[args.command](args, cfg)
    except CliError as exc:
        print(f"patgen: {exc}", file=sys.stderr)
        return exc.code
    except (geometry.LayoutError, deepsquish.TensorError, legalize.PrefilterError,
            diffusion.DenoiserOutputError, json.JSONDecodeError, ValueError) as exc:
        print(f"patgen: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"patgen: {exc.filename}: not found", file=sys.stderr)
        return EXIT_INVALID
    except (legalize.SolveFailure, denoiser.TrainingDiverged, OSError, ArithmeticError) as exc:
        print(f"patgen: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
