"""
Shared plumbing of the pointflow management commands.

A command resolves its RunConfig (settings defaults < ``--config`` YAML < flags), validates it
with ``RunConfigSerializer``, prepares the run directory and writes ``config.resolved`` before any
work starts. Failures are printed as one ``error_class=... exit_code=... message=...`` line on
stderr and the process exits with the error's code.
"""
import copy
import logging
import sys
import traceback
from contextlib import contextmanager
from pathlib import Path

import yaml
from django.conf import settings
from django.core.management.base import BaseCommand

from utils.custom_exception_handler import format_error_line, handle_exception
from utils.exceptions import ConfigError, DataError

from ..network import ModelConfig
from ..sampling import Grading, radius_grid
from ..serializer import RunConfigSerializer
from ..training import TrainConfig

logger = logging.getLogger(__name__)

RESOLVED_NAME = "config.resolved"
COMMAND_HEADER = "# command: "
RUN_SUBDIRECTORIES = ("checkpoints", "reports", "logs")
LOGGED_PACKAGES = ("pointflow_app", "utils")

# option dest -> (section, key)
FLAG_TARGETS = {
    "seed": ("runtime", "seed"),
    "precision": ("runtime", "precision"),
    "jobs": ("runtime", "n_jobs"),
    "plots": ("runtime", "plots"),
    "data": ("paths", "data"),
    "checkpoint": ("paths", "checkpoint"),
    "out": ("paths", "out"),
    "input": ("paths", "input"),
    "points": ("model", "n_points"),
    "global_feature": ("model", "global_feature_size"),
    "batch_size": ("train", "batch_size"),
    "epochs": ("train", "epochs"),
    "lr": ("train", "learning_rate"),
    "stencil_k": ("eval", "stencil_k"),
    "samples": ("data", "samples"),
    "grid_g": ("grid", "global_features"),
    "grid_batch": ("grid", "batch_sizes"),
}


def default_config():
    sections = {name.lower(): dict(values) for name, values in settings.POINTFLOW.items()}
    sections["paths"] = {"data": None, "out": None, "checkpoint": None, "input": None}
    return copy.deepcopy(sections)


def load_config_file(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: unreadable YAML ({e})")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of sections, got {type(data).__name__}")
    return data


def merge_config(base, overrides):
    """Section-wise merge; a section that is not a mapping replaces the base value for validation to reject."""
    merged = copy.deepcopy(base)
    for section, values in overrides.items():
        if isinstance(values, dict) and isinstance(merged.get(section), dict):
            merged[section].update(values)
        else:
            merged[section] = values
    return merged


def flag_overrides(options):
    overrides = {}
    for dest, (section, key) in FLAG_TARGETS.items():
        value = options.get(dest)
        if value is not None:
            overrides.setdefault(section, {})[key] = value
    return overrides


def plain(value):
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    return value


def resolve_config(options, serializer_class=RunConfigSerializer):
    config = default_config()
    if options.get("config"):
        config = merge_config(config, load_config_file(options["config"]))
    config = merge_config(config, flag_overrides(options))
    serializer = serializer_class(data=config)
    serializer.is_valid(raise_exception=True)
    return plain(serializer.validated_data)


# Typed views of a resolved config

def model_config(config):
    model = config["model"]
    return ModelConfig(
        n_points=model["n_points"],
        input_dim=model["input_dim"],
        n_cfd=model["n_cfd"],
        global_feature_size=model["global_feature_size"],
        tail_mlp=model["tail_mlp"],
    ).validate()


def train_config(config):
    runtime = config["runtime"]
    return TrainConfig(
        seed=runtime["seed"],
        precision=runtime["precision"],
        blas_threads=runtime["blas_threads"],
        **config["train"],
    ).validate()


def flow_params(config):
    data = config["data"]
    return {name: float(data[name]) for name in ("rho", "u_inf", "p0", "mu")}


def grading(config):
    data = config["data"]
    return Grading(
        n_surface=data["n_surface"], stretch=data["stretch"], extent=data.get("extent"), jitter=data["jitter"],
    )


def radii(config):
    data = config["data"]
    if data.get("radii"):
        return [float(r) for r in data["radii"]]
    return radius_grid(data["radius_min"], data["radius_max"], data["radius_step"])


class PointflowCommand(BaseCommand):
    """
    Base class of every pointflow command.

    Subclasses set ``name``, list the paths they need in ``required_paths`` and implement
    ``run(config, run_dir)``.
    """

    name = "pointflow"
    serializer_class = RunConfigSerializer
    required_paths = ()

    def add_arguments(self, parser):
        parser.add_argument("--config", help="YAML file with run configuration sections")
        parser.add_argument("--seed", type=int)
        parser.add_argument("--data", help="Dataset directory (holds manifest.yaml)")
        parser.add_argument("--checkpoint", help="PCFN checkpoint file")
        parser.add_argument("--out", help="Run directory for every output of this command")
        parser.add_argument("--points", type=int, help="Points per cloud")
        parser.add_argument("--global-feature", type=int, dest="global_feature")
        parser.add_argument("--batch-size", type=int, dest="batch_size")
        parser.add_argument("--epochs", type=int)
        parser.add_argument("--lr", type=float)
        parser.add_argument("--precision", choices=["f32", "f64"])
        parser.add_argument("--stencil-k", type=int, dest="stencil_k")
        parser.add_argument("--jobs", type=int, help="Parallel jobs for per-sample work")
        parser.add_argument("--plots", action="store_const", const=True, help="Also write PNG plots")
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        try:
            config = resolve_config(options, self.serializer_class)
            for key in self.required_paths:
                if not config["paths"].get(key):
                    raise ConfigError(f"{self.name} needs --{key}")
            run_dir = self.prepare_run(config)
            with self.run_log(run_dir):
                logger.info(f"{self.name}: run directory {run_dir}")
                self.run(config, run_dir)
        except Exception as exc:
            response = handle_exception(exc)
            self.stderr.write(format_error_line(response))
            sys.exit(response["status_code"])

    def prepare_run(self, config):
        run_dir = Path(config["paths"].get("out") or Path("runs") / self.name)
        try:
            for name in RUN_SUBDIRECTORIES:
                (run_dir / name).mkdir(parents=True, exist_ok=True)
            with open(run_dir / RESOLVED_NAME, "w", encoding="utf-8") as handle:
                # The command name stays a comment so the archive reloads through --config.
                handle.write(f"{COMMAND_HEADER}{self.name}\n")
                yaml.safe_dump(config, handle, sort_keys=True, default_flow_style=False)
        except OSError as e:
            raise DataError(f"Cannot prepare run directory {run_dir}: {e}")
        return run_dir

    @contextmanager
    def run_log(self, run_dir):
        handler = logging.FileHandler(run_dir / "logs" / f"{self.name}.log", encoding="utf-8")
        handler.setFormatter(logging.Formatter("{asctime} {levelname} {name} {message}", style="{"))
        loggers = [logging.getLogger(name) for name in LOGGED_PACKAGES]
        for item in loggers:
            item.addHandler(handler)
        try:
            yield handler
        except Exception as e:
            logger.error(f"{self.name} failed: {e}")
            logger.debug(traceback.format_exc())
            raise
        finally:
            for item in loggers:
                item.removeHandler(handler)
            handler.close()

    def run(self, config, run_dir):
        raise NotImplementedError

    def report(self, message):
        logger.info(message)
        self.stdout.write(message)


def input_files(path):
    """A single CSV file, or every ``*.csv`` directly inside a directory, sorted by name."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise DataError(f"No CSV files in {path}")
        return files
    if not path.exists():
        raise DataError(f"Input not found: {path}")
    return [path]
