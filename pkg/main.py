import argparse
import logging
import sys
from dataclasses import MISSING, fields
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from errors import AnalyticsError
from pipeline.config import PipelineConfig, load_pipeline_config
from pipeline.runner import PIPELINE, run_pipeline, run_stage, synthesize

LIST_TYPES = {"sweep_radii": float, "correlation_priority": str}
OPTIONAL_TYPES = {"strata_column": str, "strata_threshold_column": str}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One ``--flag`` per PipelineConfig field; unset flags leave the config file value."""
    group = parser.add_argument_group("config overrides")
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name in LIST_TYPES:
            group.add_argument(flag, dest=f.name, nargs="+", type=LIST_TYPES[f.name], default=None)
            continue
        default = f.default if f.default is not MISSING else None
        if isinstance(default, bool):
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif default is None:
            group.add_argument(flag, dest=f.name, type=OPTIONAL_TYPES.get(f.name, str), default=None)
        else:
            group.add_argument(flag, dest=f.name, type=type(default), default=None)


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Charging-pool consumption analytics")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in (*PIPELINE, "run"):
        help_text = "Run every stage in order" if name == "run" else f"Run the {name} stage"
        stage = sub.add_parser(name, help=help_text)
        stage.add_argument("--config", help="Pipeline config YAML (or a run manifest)")
        _add_config_flags(stage)

    synth = sub.add_parser("synth", help="Generate a synthetic world with a planted model")
    synth.add_argument("--out", default="synth_world", help="Directory for the world files")
    synth.add_argument("--synth-config", default=None, help="Synthetic world YAML")
    synth.add_argument("--seed", type=int, default=None)
    synth.add_argument("--n-pools", type=int, default=None)
    synth.add_argument("--n-features", type=int, default=None)
    synth.add_argument("--noise-sd", type=float, default=None)
    synth.add_argument("--n-jobs", type=int, default=1)
    synth.add_argument("--run", action="store_true", help="Analyse the world right away")
    return parser.parse_args(argv)


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {f.name: getattr(args, f.name, None) for f in fields(PipelineConfig)}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
    )
    try:
        if args.command == "synth":
            synth_kwargs = {"seed": args.seed, "n_pools": args.n_pools, "n_features": args.n_features, "noise_sd": args.noise_sd}
            if args.synth_config:
                synth_kwargs["config_path"] = args.synth_config
            out = synthesize(args.out, n_jobs=args.n_jobs, **synth_kwargs)
            logging.info("Synthetic world written to %s", out)
            if args.run:
                run_pipeline(load_pipeline_config(out / "pipeline_config.yaml", {"n_jobs": args.n_jobs}))
            return 0
        cfg = load_pipeline_config(args.config, _overrides(args))
        if args.command == "run":
            run_pipeline(cfg)
        else:
            run_stage(args.command, cfg)
    except AnalyticsError as exc:
        logging.error("%s: %s", exc.__class__.__name__, exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
