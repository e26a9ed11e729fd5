import logging
import time
import traceback
from dataclasses import dataclass

import numpy as np

from utils.exceptions import DataError, PointflowError

from . import network
from . import tensor_core as tc
from .checkpoint import load_checkpoint
from .normalization import NormStats, from_targets
from .sampling import PointCloud

# Initialize logger
logger = logging.getLogger(__name__)


@dataclass
class Prediction:
    cloud: PointCloud
    fields: np.ndarray
    normalized: np.ndarray
    latent: network.LatentRecord
    seconds: float


class Predictor:
    """
    A checkpoint loaded once and applied to any number of clouds.

    Outputs are mapped back to physical (u, v, p) with the NormStats stored in the checkpoint.
    """

    def __init__(self, checkpoint_path, dtype=None):
        try:
            logger.info(f"Loading checkpoint {checkpoint_path}.")
            self.params, self.metadata = load_checkpoint(checkpoint_path, dtype=dtype)
            if "norm_stats" not in self.metadata:
                logger.error(f"Checkpoint {checkpoint_path} carries no scaling statistics")
                raise DataError(f"Checkpoint {checkpoint_path} carries no scaling statistics")
            self.stats = NormStats.from_dict(self.metadata["norm_stats"])
        except PointflowError:
            raise
        except Exception as e:
            logger.error(f"An error occurred while loading {checkpoint_path}: {e}")
            logger.debug(traceback.format_exc())
            raise DataError(f"Cannot load checkpoint {checkpoint_path}: {e}")

    @property
    def config(self):
        return self.params.config

    def predict(self, cloud):
        """Predict physical (u, v, p) at every point of ``cloud``."""
        if not np.all(np.isfinite(cloud.coords)):
            logger.error("Input coordinates contain NaN or infinite values.")
            raise DataError("Input coordinates contain NaN or infinite values.")
        started = time.perf_counter()
        normalized, latent = network.forward(self.params, cloud, mode=tc.INFER)
        seconds = time.perf_counter() - started
        fields = from_targets(normalized, self.stats)
        return Prediction(cloud, fields, normalized, latent, seconds)

    def predict_many(self, clouds):
        predictions = [self.predict(cloud) for cloud in clouds]
        if predictions:
            mean = np.mean([p.seconds for p in predictions])
            logger.info(f"Predicted {len(predictions)} clouds, {mean * 1e3:.2f} ms per cloud.")
        return predictions
