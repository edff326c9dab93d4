from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

BASE_DIR = Path(__file__).resolve().parent
if str(BASE_DIR) not in sys.path:
    sys.path.insert(0, str(BASE_DIR))

try:
    from . import config
    from .cohort.dataset import write_csv as write_dataset_csv
    from .errors import ConfigError, HetfxError
    from .tools import write_csv, write_json
    from .worker import load_data, progress_log, resolve_output_dir, run_diagnostics, run_job, run_pipeline
except ImportError:
    import config
    from cohort.dataset import write_csv as write_dataset_csv
    from errors import ConfigError, HetfxError
    from tools import write_csv, write_json
    from worker import load_data, progress_log, resolve_output_dir, run_diagnostics, run_job, run_pipeline

logger = logging.getLogger("hetfx.cli")


def _load(args: argparse.Namespace) -> config.PipelineConfig:
    cfg = config.load_pipeline_config(args.config)
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        updates["threads"] = args.threads
    return cfg.model_copy(update=updates) if updates else cfg


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args)
    report = run_pipeline(cfg, args.out)
    print(report.out_dir)
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    cfg = _load(args)
    if cfg.data.synthetic is None:
        raise ConfigError("synth needs a config with a data.synthetic section")
    dataset, truth = load_data(cfg)
    out = Path(args.out)
    write_dataset_csv(dataset, out)
    write_json(out.parent, f"{out.stem}.schema.json", dataset.schema.to_dict())
    write_csv(out.parent, f"{out.stem}.truth.csv", truth.to_frame(dataset))
    print(out)
    return 0


def _cmd_diagnose(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out_dir = resolve_output_dir(cfg, args.out)
    with progress_log(out_dir):
        dataset, _ = load_data(cfg)
        run_diagnostics(dataset, cfg, out_dir)
    print(out_dir)
    return 0


def _cmd_job(args: argparse.Namespace) -> int:
    return 0 if run_job(Path(args.dir)) is not None else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetfx", description="Heterogeneous treatment effect pipeline for multi-level cohorts.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Split, fit every family, bootstrap, interpret and diagnose.")
    run.add_argument("--config", required=True, help="Pipeline config (JSON).")
    run.add_argument("--seed", type=int, default=None, help="Override the config's master seed.")
    run.add_argument("--out", default=None, help="Output directory (default: config output_dir or HETFX_OUTPUT_DIR/run_<seed>).")
    run.add_argument("--threads", type=int, default=None, help="Worker threads (default: config threads or HETFX_THREADS).")
    run.set_defaults(handler=_cmd_run)

    synth = sub.add_parser("synth", help="Write the synthetic cohort described by the config to CSV.")
    synth.add_argument("--config", required=True)
    synth.add_argument("--out", required=True, help="CSV path; a .schema.json and .truth.csv are written next to it.")
    synth.add_argument("--seed", type=int, default=None)
    synth.set_defaults(handler=_cmd_synth)

    diagnose = sub.add_parser("diagnose", help="Balance and overlap diagnostics only.")
    diagnose.add_argument("--config", required=True)
    diagnose.add_argument("--out", default=None)
    diagnose.set_defaults(handler=_cmd_diagnose)

    job = sub.add_parser("job", help="Run the pipeline from <dir>/params.json into <dir>.")
    job.add_argument("--dir", required=True)
    job.set_defaults(handler=_cmd_job)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="[%(asctime)s] %(levelname)s %(name)s: %(message)s", datefmt="%H:%M:%S")
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except HetfxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
