"""Command-line entry points.

    fedshap train   --config run.ini
    fedshap explain --config run.ini --mode federated3 --instance 17
    fedshap batch   --config run.ini --mode all --sample 1000
    fedshap guest   --config guest.ini

Exit codes: 0 success, 1 usage, 2 data error, 3 protocol error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import knn
from .config import RunConfig, load_guest_config, load_run_config, parse_transport
from .data import FeaturePartition, NumericDataset, load_adult, split_indices
from .errors import DataError, ProtocolError
from .explainer import (
    FEDERATED_PLAYER,
    BatchReport,
    Workspace,
    batch_explain,
    build_guest,
    mean_abs_deviation,
    rank_agreement,
    write_bar_csv,
    write_mean_bar_csv,
    write_report_csv,
    write_scatter_csv,
)
from .federation import GuestParty, GuestServer, TcpChannel

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROTOCOL = 0, 1, 2, 3
MANIFEST = "split.json"
MODEL = "model.npz"
BATCH_MODES = ("full", "federated3", "federated5")

log = logging.getLogger("fedshap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> int:
    data = load_adult(cfg.data)
    train_idx, test_idx = split_indices(len(data), cfg.train_fraction, cfg.seed)
    train, test = data.take(train_idx), data.take(test_idx)
    model = knn.fit(train, cfg.k)
    acc = knn.accuracy(model, test)

    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / MODEL)
    manifest = {
        "version": 1,
        "data": str(cfg.data),
        "data_sha256": file_sha256(cfg.data),
        "seed": cfg.seed,
        "train_fraction": cfg.train_fraction,
        "k": cfg.k,
        "train_ids": list(train.ids),
        "test_ids": list(test.ids),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    print(f"instances={len(data)} train={len(train)} test={len(test)} k={cfg.k}")
    print(f"accuracy={acc:.4f}")
    return EXIT_OK


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"split manifest not found: {path} (run 'fedshap train' first)")
    return json.loads(path.read_text(encoding="utf-8"))


def split_from_manifest(data: NumericDataset, manifest: dict) -> tuple[NumericDataset, NumericDataset]:
    pos = {rid: i for i, rid in enumerate(data.ids)}
    try:
        train = data.take([pos[i] for i in manifest["train_ids"]])
        test = data.take([pos[i] for i in manifest["test_ids"]])
    except KeyError as exc:
        raise DataError(f"manifest refers to unknown instance {exc}") from None
    return train, test


def load_workspace(cfg: RunConfig) -> Workspace:
    manifest = read_manifest(cfg.out_dir / MANIFEST)
    if not (cfg.out_dir / MODEL).is_file():
        raise DataError(f"model snapshot not found in {cfg.out_dir}")
    if file_sha256(cfg.data) != manifest["data_sha256"]:
        raise DataError(f"{cfg.data} differs from the file the model was trained on")
    train, test = split_from_manifest(load_adult(cfg.data), manifest)
    model = knn.KnnModel.load(cfg.out_dir / MODEL)
    return Workspace(train, test, model, cfg.key_bytes, cfg.weighting)


def _connector(cfg: RunConfig):
    kind, host, port = parse_transport(cfg.transport)
    if kind == "inproc":
        return None
    return lambda: TcpChannel(host, port)


def resolve_instance(ws: Workspace, selector: str) -> int:
    if selector.isdigit():
        row = int(selector)
        if row >= len(ws.test):
            raise DataError(f"instance {row} out of range (test set has {len(ws.test)} rows)")
        return row
    try:
        return ws.test.position(selector)
    except KeyError:
        raise DataError(f"instance {selector!r} not in the test split") from None


def cmd_explain(cfg: RunConfig, instance: str) -> int:
    if cfg.mode == "all":
        raise UsageError("explain takes a single mode")
    ws = load_workspace(cfg)
    row = resolve_instance(ws, instance)
    report = ws.explain(cfg.mode, row, cfg.guest_features, _connector(cfg))
    rid = ws.test.ids[row]
    stem = cfg.out_dir / f"explain_{cfg.mode}_{rid}"
    write_report_csv(report, f"{stem}.csv")
    write_bar_csv(report, f"{stem}_bar.csv")
    print(f"instance={rid} mode={cfg.mode} players={len(report.attributions)}")
    print(f"prediction={report.full_value!r} reference_prediction={report.base_value!r}")
    for name, phi in zip(report.player_names, report.attributions):
        print(f"  {name:<16} {phi:+.6f}")
    print(f"wrote {stem}.csv")
    return EXIT_OK


def cmd_batch(cfg: RunConfig) -> int:
    ws = load_workspace(cfg)
    modes = BATCH_MODES if cfg.mode == "all" else (cfg.mode,)
    results: dict[str, BatchReport] = {}
    for mode in modes:
        def progress(done, total, mode=mode):
            if done % 50 == 0 or done == total:
                print(f"[{mode}] {done}/{total}", file=sys.stderr)

        batch = batch_explain(ws, mode, cfg.sample, cfg.seed, cfg.guest_features, _connector(cfg), progress)
        results[mode] = batch
        write_scatter_csv(batch, cfg.out_dir / f"batch_{mode}_scatter.csv")
        write_mean_bar_csv(batch, cfg.out_dir / f"batch_{mode}_bar.csv")
        print(f"{mode}: {len(batch.instance_ids)} instances")
        for name, phi in zip(batch.player_names, batch.mean_attributions):
            print(f"  {name:<16} {phi:+.6f}")

    summary = {}
    for other in ("federated3", "federated5"):
        if "full" in results and other in results:
            full, fed = results["full"], results[other]
            host = [p for p in fed.player_names if p != FEDERATED_PLAYER]
            rhos = [rank_agreement(full.report(i), fed.report(i), host) for i in range(len(full.instance_ids))]
            mads = [mean_abs_deviation(full.report(i), fed.report(i), host) for i in range(len(full.instance_ids))]
            summary[f"full_vs_{other}"] = {"mean_rho": float(np.mean(rhos)), "mean_abs_dev": float(np.mean(mads))}
            print(f"rank agreement full vs {other}: mean rho={np.mean(rhos):.4f} mean |dphi|={np.mean(mads):.6f}")
    if summary:
        (cfg.out_dir / "batch_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    return EXIT_OK


def guest_from_config(path: str | Path) -> tuple[GuestParty, tuple[str, int], str | None]:
    gcfg = load_guest_config(path)
    manifest = read_manifest(gcfg.manifest)
    data = load_adult(gcfg.data)
    part = FeaturePartition.from_guest_names(data.schema, gcfg.features)
    train, test = split_from_manifest(data, manifest)
    guest = build_guest(train, test, part, gcfg.key_bytes)
    return guest, gcfg.address, gcfg.log


def cmd_guest(config_path: str) -> int:
    guest, address, log_path = guest_from_config(config_path)
    handler = logging.FileHandler(log_path) if log_path else logging.StreamHandler(sys.stderr)
    # no timestamps: the log holds only message types, token handles and counts
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    guest_log = logging.getLogger("fedshap.federation")
    guest_log.addHandler(handler)
    guest_log.setLevel(logging.DEBUG)
    guest_log.propagate = False
    try:
        server = GuestServer(guest, address)
    except OSError as exc:
        raise ProtocolError(f"cannot listen on {address[0]}:{address[1]}: {exc}") from exc
    print(f"guest serving {list(guest.column_names)} on {address[0]}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedshap", description="Shapley explanations for vertically federated KNN.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, mode_choices=None):
        p.add_argument("--config", help="INI run config ([run] section)")
        p.add_argument("--data", help="census CSV path")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        if mode_choices:
            p.add_argument("--mode", choices=mode_choices)
            p.add_argument("--transport", help="inproc or tcp:HOST:PORT")

    common(sub.add_parser("train", help="fit the KNN and write model + split manifest"))
    p = sub.add_parser("explain", help="explain one test instance")
    common(p, ["full", "federated3", "federated5", "custom"])
    p.add_argument("--instance", required=True, help="test row index or raw id (row-N)")
    p = sub.add_parser("batch", help="explain a random sample of test instances")
    common(p, ["full", "federated3", "federated5", "custom", "all"])
    p.add_argument("--sample", type=int)
    p = sub.add_parser("guest", help="run the guest party over TCP")
    p.add_argument("--config", required=True, help="INI guest config ([guest] section)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "guest":
            return cmd_guest(args.config)
        cfg = load_run_config(args.config).override(
            data=args.data,
            seed=args.seed,
            out=args.out,
            mode=getattr(args, "mode", None),
            transport=getattr(args, "transport", None),
            sample=getattr(args, "sample", None),
        )
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "explain":
            return cmd_explain(cfg, args.instance)
        return cmd_batch(cfg)
    except UsageError as exc:
        print(f"fedshap: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProtocolError as exc:
        print(f"fedshap: protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (DataError, ValueError, OSError, KeyError, configparser.Error) as exc:
        print(f"fedshap: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
