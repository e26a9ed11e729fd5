"""
Datasets on disk: a directory of sample CSVs plus a YAML manifest.

The manifest lists every sample with its split tag, the frozen NormStats of the training split,
the seed and the generator parameters. Generation runs one job per sample through joblib; the
manifest itself is written once, by the caller's process.
"""
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from joblib import Parallel, delayed

from utils.exceptions import DataError

from .csv_read import read_sample, write_sample
from .flow_oracle import Geometry, oracle_fields, reynolds
from .normalization import NormStats, to_targets
from .sampling import Grading, sample_cloud

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.yaml"
SPLITS = ("train", "val", "test")
MIN_SAMPLES = 10


@dataclass
class DatasetManifest:
    samples: list
    seed: int = 0
    norm_stats: dict = None
    generator: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def files(self, split=None):
        return [s["file"] for s in self.samples if split is None or s.get("split") == split]

    def counts(self):
        return {name: len(self.files(name)) for name in SPLITS}

    @property
    def stats(self):
        if self.norm_stats is None:
            raise DataError("Manifest has no scaling statistics; split and scale the dataset first")
        return NormStats.from_dict(self.norm_stats)

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "seed": self.seed,
            "norm_stats": self.norm_stats,
            "generator": self.generator,
            "samples": self.samples,
        }

    def save(self, directory):
        path = Path(directory) / MANIFEST_NAME
        with open(path, "w", encoding="utf-8") as handle:
            yaml.safe_dump(self.to_dict(), handle, sort_keys=True, default_flow_style=False)
        logger.info(f"Manifest written to {path} ({self.counts()}).")
        return path

    @classmethod
    def load(cls, directory, verify=True):
        directory = Path(directory)
        path = directory / MANIFEST_NAME
        if not path.exists():
            logger.error(f"Dataset manifest not found: {path}")
            raise DataError(f"Dataset manifest not found: {path}")
        try:
            with open(path, encoding="utf-8") as handle:
                data = yaml.safe_load(handle)
        except yaml.YAMLError as e:
            raise DataError(f"{path}: unreadable manifest ({e})")
        if not isinstance(data, dict) or data.get("format_version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported manifest format version {data.get('format_version') if isinstance(data, dict) else None}")
        manifest = cls(
            samples=list(data.get("samples") or []),
            seed=data.get("seed", 0),
            norm_stats=data.get("norm_stats"),
            generator=data.get("generator") or {},
        )
        if verify:
            for name in manifest.files():
                if not (directory / name).exists():
                    raise DataError(f"{path}: listed sample '{name}' does not exist")
        return manifest


def split_counts(total):
    """80/10/10 with the rounding remainder going to validation first."""
    n_train = int(np.floor(0.8 * total + 0.5))
    n_val = int(np.ceil((total - n_train) / 2))
    return n_train, n_val, total - n_train - n_val


def split_dataset(manifest, seed):
    """Tag every sample train/val/test by a seeded shuffle; the same seed gives the same tags."""
    total = len(manifest.samples)
    if total < MIN_SAMPLES:
        logger.error(f"Splitting needs at least {MIN_SAMPLES} samples, got {total}")
        raise DataError(f"Splitting needs at least {MIN_SAMPLES} samples, got {total}")
    n_train, n_val, _ = split_counts(total)
    order = np.random.default_rng(seed).permutation(total)
    tags = np.empty(total, dtype=object)
    tags[order[:n_train]] = "train"
    tags[order[n_train:n_train + n_val]] = "val"
    tags[order[n_train + n_val:]] = "test"
    samples = [dict(sample, split=str(tag)) for sample, tag in zip(manifest.samples, tags)]
    return DatasetManifest(samples, seed, manifest.norm_stats, manifest.generator, manifest.format_version)


def sample_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _generate_one(index, radius, directory, n_points, grading, seed, flow):
    geometry = Geometry.circle(radius)
    cloud = sample_cloud(geometry, n_points, grading, seed=sample_seed(seed, index))
    cloud.fields = oracle_fields(geometry, cloud.coords, flow["u_inf"], flow["rho"], flow["p0"])
    re = reynolds(flow["rho"], flow["u_inf"], flow["mu"], geometry.length_scale)
    cloud.meta.update({"radius": float(radius), "reynolds": float(re)})
    name = f"sample_{index:05d}.csv"
    write_sample(Path(directory) / name, cloud)
    return {"file": name, "radius": float(radius), "reynolds": float(re)}


def scale_manifest(manifest, directory):
    """Freeze NormStats over the training split."""
    flow = manifest.generator["flow"]
    fields = [read_sample(Path(directory) / f, require_fields=True).fields for f in manifest.files("train")]
    stats = NormStats.from_training(fields, flow["rho"], flow["u_inf"], flow["p0"])
    manifest.norm_stats = stats.to_dict()
    return manifest


def generate_dataset(directory, n_samples, radii, n_points, seed, flow, grading=None, n_jobs=1):
    """
    Write ``n_samples`` oracle samples cycling over ``radii``, split them and freeze NormStats.

    Returns:
        DatasetManifest
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"Cannot create dataset directory {directory}: {e}")
    grading = grading or Grading()
    logger.info(f"Generating {n_samples} samples over {len(radii)} radii into {directory} with {n_jobs} jobs.")
    samples = Parallel(n_jobs=n_jobs)(
        delayed(_generate_one)(i, radii[i % len(radii)], directory, n_points, grading, seed, flow)
        for i in range(n_samples)
    )
    generator = {
        "kind": "potential_flow_cylinder",
        "n_points": int(n_points),
        "radii": [float(r) for r in radii],
        "grading": {
            "n_surface": grading.n_surface,
            "stretch": grading.stretch,
            "extent": grading.extent,
            "jitter": grading.jitter,
        },
        "flow": {key: float(value) for key, value in flow.items()},
    }
    manifest = split_dataset(DatasetManifest(samples, int(seed), generator=generator), seed)
    scale_manifest(manifest, directory)
    manifest.save(directory)
    return manifest


def ingest_dataset(directory, sources, seed, flow):
    """Copy externally produced sample CSVs into ``directory`` and build a manifest for them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    samples = []
    for index, source in enumerate(sorted(Path(s) for s in sources)):
        cloud = read_sample(source, require_fields=True)
        name = f"sample_{index:05d}.csv"
        shutil.copyfile(source, directory / name)
        entry = {"file": name, "source": source.name}
        if cloud.geometry is not None:
            entry["reynolds"] = float(reynolds(flow["rho"], flow["u_inf"], flow["mu"], cloud.geometry.length_scale))
        samples.append(entry)
    generator = {"kind": "ingested", "flow": {key: float(value) for key, value in flow.items()}}
    manifest = split_dataset(DatasetManifest(samples, int(seed), generator=generator), seed)
    scale_manifest(manifest, directory)
    manifest.save(directory)
    return manifest


class Dataset:
    """A manifest bound to its directory, with clouds loaded lazily and cached."""

    def __init__(self, directory, manifest=None):
        self.directory = Path(directory)
        self.manifest = manifest or DatasetManifest.load(self.directory)
        self._cache = {}

    @property
    def stats(self):
        return self.manifest.stats

    def cloud(self, name):
        if name not in self._cache:
            self._cache[name] = read_sample(self.directory / name, require_fields=True)
        return self._cache[name]

    def split(self, name):
        return [self.cloud(f) for f in self.manifest.files(name)]

    def arrays(self, name, dtype=np.float64):
        """Stacked B x N x 2 coordinates and B x N x 3 targets in [0, 1] for one split."""
        clouds = self.split(name)
        if not clouds:
            raise DataError(f"Split '{name}' is empty")
        sizes = {len(c) for c in clouds}
        if len(sizes) != 1:
            raise DataError(f"Split '{name}' mixes cloud sizes {sorted(sizes)}")
        stats = self.stats
        coords = np.stack([c.coords for c in clouds]).astype(dtype)
        targets = np.stack([to_targets(c.fields, stats) for c in clouds]).astype(dtype)
        return coords, targets
