"""Command-line front end: train, build, search, eval, info.

File paths live in a flat key=value config file; numeric and engine
parameters may be overridden by flags (flags win).  Every command validates
its full configuration before doing any work, writes outputs atomically,
and on failure prints a single `error[category]: message` line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import evalbench as _eb
from . import fbpq as _fbpq
from . import hbpq as _hbpq
from . import multi_index as _mi
from . import storage as _st
from .vecio import VecFormatError, brute_force_knn, read_ground_truth, read_vectors

_PATH_KEYS = ("learn", "base", "query", "gt", "index", "coarse", "fine", "bank")
_INT_KEYS = ("d", "t", "m", "k", "l", "r", "seed", "threads", "min_points", "limit")
_BOOL_KEYS = ("optimized",)
_STR_KEYS = ("engine",)
KNOWN_KEYS = frozenset(_PATH_KEYS + _INT_KEYS + _BOOL_KEYS + _STR_KEYS)

DEFAULTS = {
    "t": 1024,
    "m": 8,
    "k": 256,
    "l": 10000,
    "r": 100,
    "seed": 0,
    "threads": 1,
    "engine": "baseline",
    "optimized": False,
}

EXIT_CODES = {
    "usage": 2,
    "config": 2,
    "io": 3,
    "format": 4,
    "incompatible": 5,
    "internal": 70,
}

EVAL_CUTOFFS = (1, 10, 100)


class CliError(Exception):
    """Carries the machine-parseable error category."""

    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise CliError("config", f"key {key!r} expects a boolean, got {raw!r}")


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw.strip(), 10)
    except ValueError:
        raise CliError("config", f"key {key!r} expects an integer, got {raw!r}") from None


def parse_config_file(path) -> dict:
    """Flat key=value file; blank lines and #-comment lines are ignored."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise CliError("io", f"cannot read config file {path}: {exc.strerror}") from exc
    cfg = {}
    for lineno, line in enumerate(lines, 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise CliError("config", f"{path}:{lineno}: expected key=value, got {text!r}")
        key, _, raw = text.partition("=")
        key = key.strip()
        if key not in KNOWN_KEYS:
            raise CliError("config", f"{path}:{lineno}: unknown key {key!r}")
        if key in cfg:
            raise CliError("config", f"{path}:{lineno}: duplicate key {key!r}")
        raw = raw.strip()
        if key in _INT_KEYS:
            cfg[key] = _parse_int(key, raw)
        elif key in _BOOL_KEYS:
            cfg[key] = _parse_bool(key, raw)
        else:
            cfg[key] = raw
    return cfg


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then flag overrides."""
    cfg = dict(DEFAULTS)
    if args.config is not None:
        cfg.update(parse_config_file(args.config))
    for key in ("engine", "l", "r", "t", "m", "k", "seed", "threads", "limit"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "optimized", None) is not None:
        cfg["optimized"] = True
    _validate_params(cfg)
    return cfg


def _validate_params(cfg: dict) -> None:
    if cfg["engine"] not in _eb.ENGINES:
        raise CliError(
            "config",
            f"engine must be one of {', '.join(_eb.ENGINES)}, got {cfg['engine']!r}",
        )
    if cfg["t"] < 1:
        raise CliError("config", f"t must be >= 1, got {cfg['t']}")
    m = cfg["m"]
    if m < 2 or m % 2 != 0 or m > _mi.MAX_PARTS:
        raise CliError(
            "config", f"m must be even and within [2, {_mi.MAX_PARTS}], got {m}"
        )
    if not 1 <= cfg["k"] <= _mi.MAX_CODEBOOK:
        raise CliError("config", f"k must be within [1, {_mi.MAX_CODEBOOK}], got {cfg['k']}")
    if cfg["l"] < 1:
        raise CliError("config", f"l must be >= 1, got {cfg['l']}")
    if cfg["r"] < 1:
        raise CliError("config", f"r must be >= 1, got {cfg['r']}")
    if cfg["seed"] < 0:
        raise CliError("config", f"seed must be >= 0, got {cfg['seed']}")
    if cfg["threads"] < 1:
        raise CliError("config", f"threads must be >= 1, got {cfg['threads']}")
    if cfg.get("min_points") is not None and cfg["min_points"] < 0:
        raise CliError("config", f"min_points must be >= 0, got {cfg['min_points']}")
    if cfg.get("limit") is not None and cfg["limit"] < 1:
        raise CliError("config", f"limit must be >= 1, got {cfg['limit']}")
    if cfg.get("d") is not None and cfg["d"] < 2:
        raise CliError("config", f"d must be >= 2, got {cfg['d']}")


def _require_paths(cfg: dict, keys, command: str) -> None:
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise CliError(
            "config", f"{command} requires config key(s): {', '.join(missing)}"
        )


def _read_input(cfg: dict, key: str):
    path = cfg[key]
    try:
        return read_vectors(path, limit=cfg.get("limit"))
    except FileNotFoundError:
        raise CliError("io", f"missing {key} file: {path}") from None
    except OSError as exc:
        raise CliError("io", f"cannot read {key} file {path}: {exc.strerror}") from exc
    except VecFormatError as exc:
        raise CliError("format", str(exc)) from exc


def _check_dim(cfg: dict, dim: int, what: str) -> None:
    if cfg.get("d") is not None and cfg["d"] != dim:
        raise CliError(
            "incompatible", f"config d={cfg['d']} but {what} has dimension {dim}"
        )


def _load_index(cfg: dict):
    path = cfg["index"]
    try:
        return _st.load_index(path)
    except FileNotFoundError:
        raise CliError("io", f"missing index file: {path}") from None
    except OSError as exc:
        raise CliError("io", f"cannot read index file {path}: {exc.strerror}") from exc
    except _st.StorageError as exc:
        raise CliError("format", str(exc)) from exc


def _make_engine(index, kind: str):
    try:
        return _eb.make_engine(index, kind)
    except ValueError as exc:
        raise CliError("incompatible", str(exc)) from exc


def cmd_train(cfg: dict) -> int:
    needs = ["learn", "coarse", "fine"]
    if cfg["engine"] == _eb.ENGINE_HBPQ:
        needs.append("bank")
    _require_paths(cfg, needs, "train")
    learn = _read_input(cfg, "learn")
    dim = learn.dim
    _check_dim(cfg, dim, "learn set")
    if dim % 2 != 0:
        raise CliError("incompatible", f"dimension must be even, got {dim}")
    if dim % cfg["m"] != 0:
        raise CliError("incompatible", f"dimension {dim} is not divisible by m={cfg['m']}")
    if cfg["t"] > learn.count:
        raise CliError(
            "config", f"t={cfg['t']} exceeds the learn set size {learn.count}"
        )
    if cfg["k"] > learn.count:
        raise CliError(
            "config", f"k={cfg['k']} exceeds the learn set size {learn.count}"
        )
    seed = cfg["seed"]
    coarse = _mi.train_coarse(learn, cfg["t"], optimized=cfg["optimized"], seed=seed)
    _st.save_coarse_pair(coarse, cfg["coarse"])
    print(f"coarse: t={cfg['t']} dim={dim} optimized={str(cfg['optimized']).lower()} -> {cfg['coarse']}")
    fine = _mi.train_fine_global(learn, coarse, cfg["m"], cfg["k"], seed=seed + 1)
    _st.save_codec(fine, cfg["fine"])
    print(f"fine: m={cfg['m']} k={cfg['k']} -> {cfg['fine']}")
    if cfg["engine"] == _eb.ENGINE_HBPQ:
        bank = _hbpq.train_local_codebooks(
            learn,
            coarse,
            cfg["m"],
            cfg["k"],
            min_points=cfg.get("min_points"),
            seed=seed + 2,
            optimized=cfg["optimized"],
        )
        _st.save_bank(bank, cfg["bank"])
        print(f"bank: cells={bank.num_cells} elements={bank.element_count()} -> {cfg['bank']}")
    return 0


def cmd_build(cfg: dict) -> int:
    hbpq = cfg["engine"] == _eb.ENGINE_HBPQ
    needs = ["base", "coarse", "index", "bank" if hbpq else "fine"]
    _require_paths(cfg, needs, "build")
    try:
        coarse = _st.load_coarse_pair(cfg["coarse"])
        model = _st.load_bank(cfg["bank"]) if hbpq else _st.load_codec(cfg["fine"])
    except FileNotFoundError as exc:
        raise CliError("io", f"missing codebook file: {exc.filename}") from None
    except _st.StorageError as exc:
        raise CliError("format", str(exc)) from exc
    base = _read_input(cfg, "base")
    _check_dim(cfg, base.dim, "base set")
    try:
        if hbpq:
            index = _hbpq.build_hbpq_index(base, coarse, model)
        else:
            index = _mi.build_index(base, coarse, model)
    except ValueError as exc:
        raise CliError("incompatible", str(exc)) from exc
    _st.save_index(index, cfg["index"])
    print(
        f"n={index.num_points} populated_cells={index.populated_cells()} "
        f"bytes_per_point={index.bytes_per_point} -> {cfg['index']}"
    )
    return 0


def cmd_search(cfg: dict) -> int:
    _require_paths(cfg, ["query", "index"], "search")
    if cfg["l"] < cfg["r"]:
        raise CliError("usage", f"l={cfg['l']} must be >= r={cfg['r']}")
    index = _load_index(cfg)
    engine = _make_engine(index, cfg["engine"])
    queries = _read_input(cfg, "query")
    if queries.dim != index.dim:
        raise CliError(
            "incompatible",
            f"query dimension {queries.dim} does not match index dimension {index.dim}",
        )
    xq = queries.data
    for qi in range(xq.shape[0]):
        ids, dists = engine.search(xq[qi], cfg["l"], cfg["r"])
        print(f"query {qi}")
        for rank in range(ids.shape[0]):
            print(f"{rank + 1} {int(ids[rank])} {float(dists[rank]):.8e}")
    return 0


def cmd_eval(cfg: dict) -> int:
    _require_paths(cfg, ["query", "index"], "eval")
    if not cfg.get("gt") and not cfg.get("base"):
        raise CliError(
            "config", "eval requires a gt file or a base set to compute one"
        )
    index = _load_index(cfg)
    engine = _make_engine(index, cfg["engine"])
    queries = _read_input(cfg, "query")
    if queries.dim != index.dim:
        raise CliError(
            "incompatible",
            f"query dimension {queries.dim} does not match index dimension {index.dim}",
        )
    if cfg.get("gt"):
        try:
            gt = read_ground_truth(cfg["gt"], limit=cfg.get("limit"))
        except FileNotFoundError:
            raise CliError("io", f"missing gt file: {cfg['gt']}") from None
        except VecFormatError as exc:
            raise CliError("format", str(exc)) from exc
        if gt.num_queries < queries.count:
            raise CliError(
                "incompatible",
                f"ground truth covers {gt.num_queries} queries, query set has {queries.count}",
            )
        if gt.num_queries > queries.count:
            gt = type(gt)(gt.ids[: queries.count], gt.distances[: queries.count])
    else:
        base = _read_input(cfg, "base")
        if base.dim != index.dim:
            raise CliError(
                "incompatible",
                f"base dimension {base.dim} does not match index dimension {index.dim}",
            )
        gt = brute_force_knn(base, queries, 1)
    r_eff = max(cfg["r"], max(EVAL_CUTOFFS))
    _, report = _eb.run_engine(engine, queries, cfg["l"], r_eff, gt, EVAL_CUTOFFS)
    recall_text = " ".join(f"R@{c}={report.recall[c]:.4f}" for c in EVAL_CUTOFFS)
    print(
        f"engine={report.engine} l={report.l} queries={report.num_queries} "
        f"{recall_text} mean_query_ms={report.mean_query_ms:.3f} "
        f"mean_candidates={report.mean_candidates:.1f}"
    )
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_info(cfg: dict) -> int:
    _require_paths(cfg, ["index"], "info")
    try:
        header = _st.read_index_header(cfg["index"])
    except FileNotFoundError:
        raise CliError("io", f"missing index file: {cfg['index']}") from None
    except _st.StorageError as exc:
        raise CliError("format", str(exc)) from exc
    t, m, k, d = (
        header["num_coarse"],
        header["num_parts"],
        header["codebook_size"],
        header["dim"],
    )
    print(f"dim={d}")
    print(f"num_points={header['num_points']}")
    print(f"num_coarse={t}")
    print(f"num_parts={m}")
    print(f"codebook_size={k}")
    print(f"optimized={str(header['optimized']).lower()}")
    print(f"local_codebooks={str(header['hbpq']).lower()}")
    print(f"bytes_per_point={4 + m}")
    if header["hbpq"]:
        print(f"bank_elements={_hbpq.bank_element_count(t, k, d)}")
    else:
        counts = _fbpq.table_element_counts(t, m, k)
        print(f"fbpq_coarse_norm_elements={counts['coarse_norms']}")
        print(f"fbpq_fine_norm_elements={counts['fine_norms']}")
        print(f"fbpq_cross_elements={counts['cross']}")
        print(f"fbpq_table_elements_total={counts['total']}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "build": cmd_build,
    "search": cmd_search,
    "eval": cmd_eval,
    "info": cmd_info,
}


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="flat key=value config file with data paths")
    shared.add_argument(
        "--engine",
        choices=list(_eb.ENGINES),
        help="reranking engine (default baseline)",
    )
    shared.add_argument("--l", type=int, help="candidate budget (default 10000)")
    shared.add_argument("--r", type=int, help="result list length (default 100)")
    shared.add_argument("--t", type=int, help="coarse codebook size per half (default 1024)")
    shared.add_argument("--m", type=int, help="fine code parts (default 8)")
    shared.add_argument("--k", type=int, help="fine codebook size (default 256)")
    shared.add_argument(
        "--optimized",
        action="store_const",
        const=True,
        help="learn orthogonal rotations during training",
    )
    shared.add_argument("--seed", type=int, help="training seed (default 0)")
    shared.add_argument(
        "--threads",
        type=int,
        help="reserved concurrency cap; all kernels currently run single-threaded",
    )
    shared.add_argument("--limit", type=int, help="cap on records read from input files")
    parser = argparse.ArgumentParser(
        prog="bilayerpq",
        description="Bilayer product-quantization vector search.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.add_parser("train", parents=[shared], help="train coarse, fine and local codebooks")
    sub.add_parser("build", parents=[shared], help="encode a base set into an index file")
    sub.add_parser("search", parents=[shared], help="run queries against an index")
    sub.add_parser("eval", parents=[shared], help="measure recall against ground truth")
    sub.add_parser("info", parents=[shared], help="print index header and memory accounting")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("error[usage]: missing command", file=sys.stderr)
        return EXIT_CODES["usage"]
    try:
        cfg = resolve_config(args)
        return _COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES[exc.category]
    except (VecFormatError, _st.StorageError) as exc:
        print(f"error[format]: {exc}", file=sys.stderr)
        return EXIT_CODES["format"]
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]
    except ValueError as exc:
        print(f"error[incompatible]: {exc}", file=sys.stderr)
        return EXIT_CODES["incompatible"]
    except MemoryError:
        print("error[internal]: out of memory", file=sys.stderr)
        return EXIT_CODES["internal"]


if __name__ == "__main__":
    sys.exit(main())
