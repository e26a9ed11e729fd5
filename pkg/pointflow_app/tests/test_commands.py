import io
import tempfile
from pathlib import Path

import pandas as pd
import yaml
from django.core.management import call_command
from django.test import SimpleTestCase

from pointflow_app.dataset import MANIFEST_NAME, Dataset
from pointflow_app.management.base import COMMAND_HEADER, RESOLVED_NAME

TINY_CONFIG = {
    "model": {"n_points": 64, "global_feature_size": 16, "tail_mlp": [32, 16]},
    "train": {"epochs": 2, "batch_size": 2, "log_every": 1},
    "data": {"samples": 10, "radii": [0.4, 0.8], "n_surface": 16},
    "grid": {"global_features": [16], "batch_sizes": [2]},
    "runtime": {"seed": 3},
}


def run(name, **options):
    out, err = io.StringIO(), io.StringIO()
    call_command(name, stdout=out, stderr=err, **options)
    return out.getvalue()


class CommandPipelineTests(SimpleTestCase):
    """Generate, train, then run every consumer of the checkpoint on a tiny configuration."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        cls.config = cls.root / "tiny.yaml"
        cls.config.write_text(yaml.safe_dump(TINY_CONFIG), encoding="utf-8")
        cls.data = cls.root / "dataset"
        run("gen_data", config=str(cls.config), data=str(cls.data), out=str(cls.root / "gen"))
        run("train", config=str(cls.config), data=str(cls.data), out=str(cls.root / "train"))
        cls.checkpoint = cls.root / "train" / "checkpoints" / "model.pcfn"

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def options(self, out, **extra):
        return dict(config=str(self.config), out=str(self.root / out), **extra)

    def test_gen_data_splits_and_reruns_identically(self):
        counts = Dataset(self.data).manifest.counts()
        self.assertEqual(counts, {"train": 8, "val": 1, "test": 1})
        before = (self.data / MANIFEST_NAME).read_bytes()
        run("gen_data", **self.options("gen", data=str(self.data)))
        self.assertEqual((self.data / MANIFEST_NAME).read_bytes(), before)

        text = (self.root / "gen" / RESOLVED_NAME).read_text(encoding="utf-8")
        self.assertEqual(text.splitlines()[0], f"{COMMAND_HEADER}gen_data")
        resolved = yaml.safe_load(text)
        self.assertNotIn("command", resolved)
        self.assertEqual(resolved["model"]["n_points"], 64)
        self.assertEqual(resolved["runtime"]["seed"], 3)
        for name in ("checkpoints", "reports", "logs"):
            self.assertTrue((self.root / "gen" / name).is_dir())

    def test_gen_data_reruns_from_its_archived_config(self):
        archived = self.root / "gen" / RESOLVED_NAME
        again = self.root / "dataset_again"
        run("gen_data", config=str(archived), data=str(again), out=str(self.root / "gen_again"))
        for name in Dataset(self.data).manifest.files("train"):
            self.assertEqual((again / name).read_bytes(), (self.data / name).read_bytes())

    def test_train_reruns_bit_identically_from_its_archived_config(self):
        archived = self.root / "train" / RESOLVED_NAME
        run("train", config=str(archived), data=str(self.data), out=str(self.root / "train_again"))
        first = pd.read_csv(self.root / "train" / "reports" / "loss.csv", float_precision="round_trip")
        second = pd.read_csv(self.root / "train_again" / "reports" / "loss.csv", float_precision="round_trip")
        pd.testing.assert_frame_equal(first.drop(columns="seconds"), second.drop(columns="seconds"), check_exact=True)
        again = self.root / "train_again" / "checkpoints" / "model.pcfn"
        self.assertEqual(again.read_bytes(), self.checkpoint.read_bytes())

    def test_train_outputs(self):
        self.assertTrue(self.checkpoint.exists())
        loss = pd.read_csv(self.root / "train" / "reports" / "loss.csv")
        self.assertEqual(loss["epoch"].tolist(), [0, 1, 2])
        text = (self.root / "train" / "reports" / "training.txt").read_text(encoding="utf-8")
        self.assertIn("test loss (best checkpoint)", text)
        self.assertTrue((self.root / "train" / "logs" / "train.log").exists())

    def test_predict_coordinates_only_csv(self):
        sample = Dataset(self.data).split("test")[0]
        source = self.root / "coords.csv"
        pd.DataFrame(sample.coords, columns=["x", "y"]).to_csv(source, index=False)
        run("predict", **self.options("predict", checkpoint=str(self.checkpoint), input=str(source)))
        frame = pd.read_csv(self.root / "predict" / "predictions" / "coords.csv")
        self.assertEqual(list(frame.columns), ["x", "y", "u", "v", "p"])
        self.assertEqual(len(frame), 64)

    def test_eval_writes_summary_and_point_errors(self):
        run("eval", **self.options("eval", checkpoint=str(self.checkpoint), data=str(self.data)))
        reports = self.root / "eval" / "reports"
        self.assertIn("[euclidean]", (reports / "errors.txt").read_text(encoding="utf-8"))
        self.assertEqual(len(pd.read_csv(reports / "errors.csv")), 1)
        name = Dataset(self.data).manifest.files("test")[0]
        points = pd.read_csv(reports / "errors" / name)
        self.assertEqual(list(points.columns), ["x", "y", "err_u", "err_v", "err_p", "is_critical"])
        self.assertGreater(points["is_critical"].sum(), 0)

    def test_residuals_with_and_without_checkpoint(self):
        run("residuals", **self.options("residuals_ref", data=str(self.data)))
        reports = self.root / "residuals_ref" / "reports"
        self.assertTrue((reports / "residuals_reference.txt").exists())
        self.assertFalse((reports / "residuals.txt").exists())

        run("residuals", **self.options("residuals", data=str(self.data), checkpoint=str(self.checkpoint)))
        reports = self.root / "residuals" / "reports"
        self.assertIn("predicted fields", (reports / "residuals.txt").read_text(encoding="utf-8"))
        gradients = pd.read_csv(reports / "gradient_residuals.csv")
        self.assertEqual(gradients["set"].tolist(), ["critical", "non_critical"])
        self.assertIn("non-critical interior points", (reports / "gradient_residuals.txt").read_text(encoding="utf-8"))

    def test_critical_on_test_split(self):
        run("critical", **self.options("critical", data=str(self.data), checkpoint=str(self.checkpoint)))
        text = (self.root / "critical" / "reports" / "critical.txt").read_text(encoding="utf-8")
        self.assertIn("Critical points per cloud", text)
        self.assertIn("/16", text)

    def test_grid_search_resumes(self):
        options = self.options("grid", data=str(self.data), grid_g=[16], grid_batch=[2])
        run("grid_search", **options)
        grid_csv = self.root / "grid" / "reports" / "grid.csv"
        before = grid_csv.read_bytes()
        table = pd.read_csv(grid_csv)
        self.assertEqual(table["feasible"].tolist(), ["yes"])
        self.assertTrue((self.root / "grid" / "checkpoints" / "G16_B2.pcfn").exists())
        run("grid_search", **options)
        self.assertEqual(grid_csv.read_bytes(), before)


class CommandErrorTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def call(self, name, **options):
        err = io.StringIO()
        with self.assertRaises(SystemExit) as raised:
            call_command(name, stdout=io.StringIO(), stderr=err, **options)
        return raised.exception.code, err.getvalue()

    def test_unknown_config_key(self):
        config = self.root / "bad.yaml"
        config.write_text(yaml.safe_dump({"model": {"n_points": 64, "colour": "red"}}), encoding="utf-8")
        code, err = self.call("gen_data", config=str(config), out=str(self.root / "run"))
        self.assertEqual(code, 2)
        self.assertIn("error_class=ConfigError exit_code=2", err)
        self.assertIn("colour", err)

    def test_missing_config_file(self):
        code, err = self.call("gen_data", config=str(self.root / "absent.yaml"), out=str(self.root / "run"))
        self.assertEqual(code, 2)

    def test_missing_required_path(self):
        code, err = self.call("train", out=str(self.root / "run"))
        self.assertEqual(code, 2)
        self.assertIn("needs --data", err)

    def test_missing_checkpoint(self):
        source = self.root / "coords.csv"
        source.write_text("x,y\n0,1\n1,0\n", encoding="utf-8")
        code, err = self.call(
            "predict", checkpoint=str(self.root / "none.pcfn"), input=str(source), out=str(self.root / "run"),
        )
        self.assertEqual(code, 3)
        self.assertIn("error_class=CheckpointError exit_code=3", err)
