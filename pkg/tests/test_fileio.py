import json

import numpy as np
import pytest

from dualdistill import fileio
from dualdistill.errors import ParseError
from dualdistill.losses import LossBreakdown
from dualdistill.pipeline import MetricsRecord
from dualdistill.simplex import PredictionMatrix
from dualdistill.synth import TargetDataset, default_domain_pair, generate


class TestPredictionMatrixFormat:
    def _matrix(self, seed=0, n=9, c=4):
        rng = np.random.default_rng(seed)
        return PredictionMatrix(rng.dirichlet(np.ones(c), size=n), tuple(f"id{i}" for i in range(n)))

    def test_lossless_round_trip(self, tmp_path):
        m = self._matrix()
        path = tmp_path / "m.csv"
        fileio.write_prediction_matrix(path, m)
        back = fileio.read_prediction_matrix(path)
        assert back.sample_ids == m.sample_ids
        assert np.abs(back.probs - m.probs).max() < 1e-12

    def test_header_names_columns(self, tmp_path):
        path = tmp_path / "m.csv"
        fileio.write_prediction_matrix(path, self._matrix(c=3))
        assert path.read_text().splitlines()[0] == "id,p0,p1,p2"

    def test_small_row_sum_deviation_renormalized(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("id,p0,p1\na,0.5000002,0.5000002\n")
        m = fileio.read_prediction_matrix(path)
        assert m.probs[0].sum() == pytest.approx(1.0, abs=1e-15)

    def test_large_row_sum_rejected_with_line(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("id,p0,p1\na,0.5,0.5\nb,0.5,0.4\n")
        with pytest.raises(ParseError) as err:
            fileio.read_prediction_matrix(path)
        assert err.value.line == 3

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("id,p0,p1\na,0.5,0.5\na,0.5,0.5\n")
        with pytest.raises(ParseError) as err:
            fileio.read_prediction_matrix(path)
        assert err.value.line == 3

    def test_wrong_column_count_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("id,p0,p1\na,0.5,0.25,0.25\n")
        with pytest.raises(ParseError) as err:
            fileio.read_prediction_matrix(path)
        assert err.value.line == 2

    def test_malformed_float_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("id,p0,p1\na,0.5,zebra\n")
        with pytest.raises(ParseError):
            fileio.read_prediction_matrix(path)

    def test_expected_class_mismatch(self, tmp_path):
        path = tmp_path / "m.csv"
        fileio.write_prediction_matrix(path, self._matrix(c=3))
        with pytest.raises(ParseError):
            fileio.read_prediction_matrix(path, expected_classes=5)


class TestDatasetFormat:
    def test_round_trip_labeled(self, tmp_path):
        ds = generate(default_domain_pair(seed=0, n_target=30))
        path = tmp_path / "d.csv"
        fileio.write_dataset(path, ds, class_count=4)
        back, c = fileio.read_dataset(path)
        assert c == 4
        assert back.sample_ids == ds.sample_ids
        assert np.abs(back.features - ds.features).max() < 1e-15
        assert np.array_equal(back.labels, ds.labels)

    def test_round_trip_unlabeled(self, tmp_path):
        ds = generate(default_domain_pair(seed=0, n_target=10))
        unlabeled = TargetDataset(ds.features, ds.sample_ids, None)
        path = tmp_path / "d.csv"
        fileio.write_dataset(path, unlabeled)
        back, c = fileio.read_dataset(path)
        assert c is None
        assert back.labels is None

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,1.0,2.0\n")
        with pytest.raises(ParseError):
            fileio.read_dataset(path)

    def test_row_count_mismatch_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("# dualdistill-dataset d=2 C=2 n=5 labels=0\na,1.0,2.0\n")
        with pytest.raises(ParseError):
            fileio.read_dataset(path)


class TestMetricsAndManifest:
    def _records(self):
        return [
            MetricsRecord(1, 1, LossBreakdown(kd=0.5, im=0.1, dt=0.4, total=0.4),
                          None, 0.75, 1.2),
            MetricsRecord(2, 2, LossBreakdown(self_ce=0.2, total=0.2), None, 0.8, 1.3),
        ]

    def test_metrics_round_trip(self, tmp_path):
        path = tmp_path / "m.ndjson"
        fileio.write_metrics(path, self._records())
        rows = fileio.read_metrics(path)
        assert len(rows) == 2
        assert rows[0]["losses"]["kd"] == 0.5
        assert rows[1]["stage"] == 2
        assert rows[0]["losses"]["mix"] is None

    def test_metrics_bytes_deterministic(self, tmp_path):
        p1, p2 = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
        fileio.write_metrics(p1, self._records())
        fileio.write_metrics(p2, self._records())
        assert p1.read_bytes() == p2.read_bytes()

    def test_plot_series(self, tmp_path):
        paths = fileio.write_plot_series(str(tmp_path) + "/plot_", self._records())
        names = {p.rsplit("/", 1)[-1] for p in paths}
        assert "plot_target_accuracy.dat" in names
        assert "plot_loss_kd.dat" in names
        content = (tmp_path / "plot_target_accuracy.dat").read_text().splitlines()
        assert content[0].split() == ["1", "0.75"]

    def test_manifest_contents_and_determinism(self, tmp_path):
        data = tmp_path / "in.csv"
        data.write_text("id,p0,p1\na,0.5,0.5\n")
        m1 = tmp_path / "m1.json"
        m2 = tmp_path / "m2.json"
        fileio.write_manifest(m1, {"seed": 0}, 0, {"data": str(data)}, {"metrics": "x"})
        fileio.write_manifest(m2, {"seed": 0}, 0, {"data": str(data)}, {"metrics": "x"})
        assert m1.read_bytes() == m2.read_bytes()
        doc = json.loads(m1.read_text())
        assert doc["input_digests"]["data"] == fileio.sha256_of(data)
        assert "version" in doc
