"""Command-line entry point: ``so3kit <command> ...``.

Results go to stdout, the resolved configuration and diagnostics to stderr.
Exit codes: 0 success, 1 property failure, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import DivergenceError, So3kitError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
DEFAULT_TOL = {"math": 1e-9, "tfn": 1e-7, "attention": 1e-7, "model": 1e-5}


class ConfigError(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return doc


def _resolve(args, file_config: dict, keys) -> dict:
    """Flags override config-file values, which override defaults."""
    resolved = {}
    for key, default in keys.items():
        flag = getattr(args, key, None)
        resolved[key] = flag if flag is not None else file_config.get(key, default)
    return resolved


def _announce(command: str, resolved: dict):
    print(json.dumps({"command": command, "config": resolved}, sort_keys=True, default=str), file=sys.stderr)


def _write(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------ commands


def cmd_cg_table(args) -> int:
    from .cg import basis_q_j, coupled_degrees

    cfg = _resolve(args, _load_config(args.config), {"max_degree": 1, "out": None})
    _announce("cg-table", cfg)
    D = int(cfg["max_degree"])
    if not 0 <= D <= 4:
        raise ConfigError(f"max degree must lie in 0..4, got {D}")
    lines = []
    for k in range(D + 1):
        for l in range(D + 1):
            for J in coupled_degrees(k, l):
                q = basis_q_j(k, l, J).q_t
                lines.append(json.dumps({"k": k, "l": l, "J": J, "rows": q.shape[0], "cols": q.shape[1],
                                         "data": q.reshape(-1).tolist()}))
    _write("\n".join(lines) + "\n", cfg["out"])
    return EXIT_OK


def cmd_sh_eval(args) -> int:
    from .so3 import sh_vector

    cfg = _resolve(args, _load_config(args.config), {"degree": 0, "dir": "0,0,1"})
    _announce("sh-eval", cfg)
    try:
        v = np.array([float(x) for x in str(cfg["dir"]).split(",")])
    except ValueError:
        raise ConfigError(f"--dir expects x,y,z, got {cfg['dir']!r}") from None
    if v.shape != (3,):
        raise ConfigError(f"--dir expects three components, got {cfg['dir']!r}")
    r = np.linalg.norm(v)
    if r < 1e-12:
        raise ConfigError("degenerate direction: the zero vector has no direction")
    values = sh_vector(int(cfg["degree"]), v / r)
    print(" ".join(repr(float(x) + 0.0) for x in values))
    return EXIT_OK


def cmd_check(args) -> int:
    from .harness import suites

    cfg = _resolve(args, _load_config(args.config),
                   {"target": "math", "trials": 10, "tol": None, "seed": 0, "report": None})
    if cfg["target"] not in DEFAULT_TOL:
        raise ConfigError(f"unknown target {cfg['target']!r}")
    if cfg["tol"] is None:
        cfg["tol"] = DEFAULT_TOL[cfg["target"]]
    if int(cfg["trials"]) < 1:
        raise ConfigError("trials must be at least 1")
    _announce("check", cfg)
    reports = suites.run_suite(cfg["target"], int(cfg["trials"]), float(cfg["tol"]), int(cfg["seed"]))
    passed = all(r.passed for r in reports)
    summary = {"target": cfg["target"], "passed": passed, "reports": [r.to_dict() for r in reports]}
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: max residual {r.max_residual:.3e} (tol {r.tol:g})")
    if cfg["report"]:
        Path(cfg["report"]).write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return EXIT_OK if passed else EXIT_FAIL


def _load_dataset(data_dir, radius: float, target: str):
    from .graph import build_graph, load_graph_json, read_xyz

    root = Path(data_dir)
    if not root.is_dir():
        raise ConfigError(f"data directory {root} does not exist")
    graphs = []
    for path in sorted(root.iterdir()):
        if path.suffix == ".json":
            graphs.append(load_graph_json(path))
        elif path.suffix == ".xyz":
            graphs.append(build_graph(read_xyz(path), "cutoff", radius=radius))
    if not graphs:
        raise ConfigError(f"no .json or .xyz graphs in {root}")
    missing = [i for i, g in enumerate(graphs) if target not in g.targets]
    if missing:
        raise ConfigError(f"{len(missing)} graphs lack target {target!r}")
    return graphs


def cmd_train(args) -> int:
    from .harness import TrainConfig, synthetic_dataset, train
    from .layers import ModelConfig, QM9Model

    file_cfg = _load_config(args.config)
    cfg = _resolve(args, file_cfg, {"data": None, "synthetic": None, "seed": 0, "epochs": None, "lr": None,
                                    "checkpoint": None, "out": None, "radius": 5.0})
    model_doc = dict(file_cfg.get("model", {}))
    train_doc = dict(file_cfg.get("train", {}))
    train_doc["seed"] = int(cfg["seed"])
    model_doc.setdefault("seed", int(cfg["seed"]))
    if cfg["epochs"] is not None:
        train_doc["epochs"] = int(cfg["epochs"])
    if cfg["lr"] is not None:
        train_doc["lr"] = float(cfg["lr"])
    try:
        model_cfg = ModelConfig.from_dict(model_doc)
        train_cfg = TrainConfig.from_dict(train_doc)
    except (TypeError, So3kitError) as exc:
        raise ConfigError(str(exc)) from None
    cfg["model"], cfg["train"] = model_cfg.to_dict(), vars(train_cfg)
    _announce("train", cfg)
    if cfg["data"] is not None:
        graphs = _load_dataset(cfg["data"], float(cfg["radius"]), train_cfg.target)
    elif cfg["synthetic"] is not None:
        graphs = synthetic_dataset(int(cfg["synthetic"]), seed=int(cfg["seed"]))
    else:
        raise ConfigError("train needs --data DIR or --synthetic N")
    run = train(QM9Model(model_cfg), graphs, train_cfg, checkpoint=cfg["checkpoint"])
    _write(json.dumps(run.to_dict(), sort_keys=True) + "\n", cfg["out"])
    return EXIT_OK


def cmd_predict(args) -> int:
    from .graph import load_graph_json
    from .harness import load_model, predict

    cfg = _resolve(args, _load_config(args.config), {"checkpoint": None, "input": None})
    _announce("predict", cfg)
    if not cfg["checkpoint"] or not cfg["input"]:
        raise ConfigError("predict needs --checkpoint and --input")
    try:
        model = load_model(cfg["checkpoint"])
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load checkpoint: {exc}") from None
    print(repr(float(predict(model, load_graph_json(cfg["input"]))[0])))
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="so3kit", description="SO(3)-equivariant graph network toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON file with option values; flags take precedence")
        p.set_defaults(func=func)
        return p

    p = add("cg-table", cmd_cg_table, "write Clebsch-Gordan blocks as JSON lines")
    p.add_argument("--max-degree", dest="max_degree", type=int)
    p.add_argument("--out")

    p = add("sh-eval", cmd_sh_eval, "evaluate real spherical harmonics of one degree at a direction")
    p.add_argument("--degree", type=int)
    p.add_argument("--dir", help="x,y,z (normalized before evaluation)")

    p = add("check", cmd_check, "run an equivariance property suite")
    p.add_argument("--target", choices=sorted(DEFAULT_TOL))
    p.add_argument("--trials", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--report", help="write the JSON report here")

    p = add("train", cmd_train, "train the property model and print the run as JSON")
    p.add_argument("--data", help="directory of graph .json or QM9 .xyz files")
    p.add_argument("--synthetic", type=int, help="train on N synthetic molecules instead of --data")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--radius", type=float, help="cutoff radius for .xyz inputs (A)")
    p.add_argument("--checkpoint", help="write a checkpoint manifest here")
    p.add_argument("--out", help="write the run JSON here instead of stdout")

    p = add("predict", cmd_predict, "predict a scalar for one graph JSON file")
    p.add_argument("--checkpoint")
    p.add_argument("--input")
    return parser


@contextlib.contextmanager
def _thread_limit():
    value = os.environ.get("SO3KIT_THREADS")
    if not value:
        yield
        return
    from threadpoolctl import threadpool_limits

    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"SO3KIT_THREADS must be an integer, got {value!r}") from None
    with threadpool_limits(limits=max(1, n)):
        yield


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (So3kitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
