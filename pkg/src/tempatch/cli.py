"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure, 5 internal error.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import time

import click
import numpy as np

from . import kernels, synth
from . import tensor as T
from . import trainer as tr
from .data import chronological_split, dataset_hash, inductive_split, load_edge_stream
from .errors import ConfigError, TempatchError
from .stream import extract_window, patchify
from .trainer import RunConfig


def _load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(raw)


@click.group()
def cli():
    """Dynamic-graph encoder: data prep, training, evaluation, benchmarks."""


@cli.command()
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--split", default="transductive",
              type=click.Choice(["transductive", "inductive"]))
@click.option("--seed", default=0, show_default=True)
def prepare(dataset, split, seed):
    """Validate a dataset and report its statistics and split sizes."""
    g = load_edge_stream(dataset)
    rows = list(zip(g.src.tolist(), g.dst.tolist(), g.t.tolist(), g.labels.tolist()))
    if split == "inductive":
        sp = inductive_split(g, seed=seed)
    else:
        sp = chronological_split(g)
    report = {
        "dataset": str(dataset),
        "sha256": dataset_hash(dataset),
        "num_nodes": g.num_nodes,
        "num_edges": g.num_edges,
        "edge_feature_dim": g.edge_dim,
        "has_labels": g.has_labels(),
        "time_span": [float(g.t[0]), float(g.t[-1])],
        "repeat_ratio": round(synth.repeat_ratio(rows), 6),
        "split": {"mode": sp.mode,
                  "train": len(sp.train_idx),
                  "val": len(sp.val_idx),
                  "test": len(sp.test_idx),
                  "masked_nodes": len(sp.masked_nodes)},
    }
    click.echo(json.dumps(report, indent=2))


@cli.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--workdir", default=".", type=click.Path(file_okay=False))
def train(config_path, workdir):
    """Train from a JSON config; writes checkpoint.bin, metrics.csv and
    manifest.json under the workdir."""
    config = _load_config(config_path)
    result = tr.train(config, workdir)
    click.echo(json.dumps({"checkpoint": result.checkpoint, "best": result.best}))


@cli.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--split", default="test", type=click.Choice(["val", "test"]))
@click.option("--seed", default=None, type=int,
              help="Override the evaluation sampling seed.")
def evaluate(config_path, checkpoint, split, seed):
    """Report metrics of a stored checkpoint on the chosen split."""
    config = _load_config(config_path)
    metrics = tr.evaluate(checkpoint, split, config, eval_seed=seed)
    click.echo(json.dumps({"split": split, **{k: round(v, 6) for k, v in metrics.items()}}))


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(field_name: str, raw: str):
    if field_name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config field {field_name!r}")
    current = getattr(RunConfig(dataset=""), field_name)
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean for {field_name!r}, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(int(x) for x in raw.split(":"))
    return raw


@cli.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--param", required=True,
              help="Config field to sweep (e.g. pe_kind, patches, window, blocks).")
@click.option("--values", required=True,
              help="Comma-separated settings; tuples use colons (64:1:1).")
@click.option("--seeds", default="0", show_default=True)
@click.option("--workdir", default=".", type=click.Path(file_okay=False))
@click.option("--out", default="ablation.csv", show_default=True)
def ablate(config_path, param, values, seeds, workdir, out):
    """Sweep one config field, retraining per setting and seed; writes a
    CSV of test metrics per run."""
    import os
    base = _load_config(config_path)
    seed_list = [int(s) for s in seeds.split(",")]
    rows = []
    for raw_value in values.split(","):
        value = _coerce(param, raw_value)
        for seed in seed_list:
            cfg = dataclasses.replace(base, seed=seed, **{param: value})
            cfg.validate()
            run_dir = os.path.join(workdir, f"{param}-{raw_value}-s{seed}")
            result = tr.train(cfg, run_dir)
            metrics = tr.evaluate(result.checkpoint, "test", cfg)
            for metric, mval in metrics.items():
                rows.append((param, raw_value, seed, metric, mval))
            click.echo(f"{param}={raw_value} seed={seed}: " +
                       " ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    with open(os.path.join(workdir, out), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("param,value,seed,metric,score\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]},{r[3]},{r[4]:.12g}\n")


@cli.command()
@click.option("--sizes", default="4096,8192,16384,32768", show_default=True,
              help="Comma-separated window sizes (edges) to encode.")
@click.option("--patches", default=8, show_default=True)
@click.option("--blocks", default=3, show_default=True)
@click.option("--d-h", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default="bench.csv", show_default=True)
@click.option("--repeat", default=1, show_default=True)
def bench(sizes, patches, blocks, d_h, seed, out, repeat):
    """Time one encoder forward pass per window size; writes E,M,L,ms."""
    from .encoder import EncoderConfig, encode, init_encoder_params
    size_list = [int(s) for s in sizes.split(",")]
    if any(s < patches for s in size_list):
        raise ConfigError("every size must be >= the patch count")
    max_e = max(size_list)
    rows = synth.generate_longrange(num_nodes=256, num_edges=max_e + 1, seed=seed)
    g = _graph_from_rows(rows)
    cfg = EncoderConfig(d_h=d_h, d_v=1, d_e=0, blocks=blocks)
    params = init_encoder_params(np.random.default_rng(seed), cfg)
    results = []
    for e in size_list:
        w = extract_window(g, end_idx=e, W=e)
        ps = patchify(w, patches)
        with T.no_grad():
            encode(w, ps, params, seed=seed)          # warm up caches
            best = min(_timed(encode, w, ps, params, seed) for _ in range(repeat))
        results.append((e, patches, blocks, best))
        click.echo(f"E={e} M={patches} L={blocks} backend={kernels.BACKEND}: "
                   f"{best:.1f} ms")
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("E,M,L,ms\n")
        for e, m, l, ms in results:
            fh.write(f"{e},{m},{l},{ms:.3f}\n")


def _timed(fn, *args, **kwargs) -> float:
    t0 = time.perf_counter()
    fn(*args, **kwargs)
    return (time.perf_counter() - t0) * 1e3


def _graph_from_rows(rows):
    import os
    import tempfile
    fd, path = tempfile.mkstemp(suffix=".csv")
    os.close(fd)
    try:
        synth.write_csv(rows, path)
        return load_edge_stream(path)
    finally:
        os.unlink(path)


@cli.command("bench-kernels")
@click.option("--size", default=1 << 20, show_default=True)
@click.option("--width", default=64, show_default=True)
@click.option("--repeat", default=5, show_default=True)
def bench_kernels(size, width, repeat):
    """Compare the compiled and pure-python aggregation kernels."""
    from .kernels import _reference
    rng = np.random.default_rng(0)
    vals = rng.standard_normal((size, width)).astype(np.float32)
    seg = np.sort(rng.integers(0, size // 16, size=size)).astype(np.int64)
    scores = rng.standard_normal(size).astype(np.float32)
    backends = [("python", _reference)]
    if kernels.BACKEND == "cython":
        from .kernels import _speedups
        backends.append(("cython", _speedups))
    for name, mod in backends:
        for op, call in (
            ("segment_sum", lambda m=mod: m.segment_sum(vals, seg, size // 16)),
            ("segment_max", lambda m=mod: m.segment_max(scores, seg, size // 16)),
        ):
            best = min(_timed(call) for _ in range(repeat))
            click.echo(f"{name:7s} {op:12s} n={size} d={width}: {best:.2f} ms")
    if len(backends) == 2:
        a = backends[0][1].segment_sum(vals, seg, size // 16)
        b = backends[1][1].segment_sum(vals, seg, size // 16)
        click.echo(f"bit-identical: {bool(np.array_equal(a, b))}")


@cli.command("synth")
@click.option("--pattern", required=True, type=click.Choice(["periodic", "longrange"]))
@click.option("--nodes", default=20, show_default=True)
@click.option("--edges", default=2000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def synth_cmd(pattern, nodes, edges, seed, out):
    """Generate a synthetic event stream CSV."""
    rows = synth.generate(pattern, nodes, edges, seed)
    synth.write_csv(rows, out)
    click.echo(f"wrote {len(rows)} edges to {out} "
               f"(repeat ratio {synth.repeat_ratio(rows):.3f})")


def main():
    try:
        cli(standalone_mode=False)
    except TempatchError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(130)
    except (OSError, ValueError) as exc:
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(5)
    sys.exit(0)


if __name__ == "__main__":
    main()
