import numpy as np
import pandas as pd
import pytest

from crtxnn import cli, cortex, nets, serialization
from crtxnn.tensor import Shape

BOUND = """
experiment = "verify-bound"
seed = 0
output_dir = "{out}"

[bound]
t_min = 2.0
t_max = 2.5
n_min = 3
n_max = 4
samples = 400
agreement_z = {z}
"""

FNAPPROX = """
experiment = "fnapprox"
seed = 3
output_dir = "{out}"

[data]
function = "cubic"
n = 40

[network.function]
kind = "mlp-regressor"
input_shape = [1]
output_size = 1
hidden = [4]
"""


@pytest.fixture
def model_file(tmp_path, small_regressor):
    key = cortex.SenseKey(Shape.of(1), Shape.of(1))
    area = cortex.AssociationArea(key=key, kind=cortex.REGRESSION, networks=[nets.init_network(small_regressor, seed=0)])
    model = cortex.CortexModel(areas={key: area}, config={"experiment": "fnapprox", "seed": 0})
    return serialization.save_model(model, tmp_path / "model.crtx"), model


def _write(tmp_path, name, text, z=4.0):
    path = tmp_path / name
    path.write_text(text.format(out=tmp_path / "out", z=z))
    return path


class TestPredict:

    def test_text_input(self, tmp_path, model_file, capsys):
        path, model = model_file
        (tmp_path / "x.txt").write_text("0.5\n")
        assert cli.main(["predict", "--model", str(path), "--input", str(tmp_path / "x.txt")]) == 0
        out = capsys.readouterr().out
        expected = cortex.predict(model, np.array([0.5]), (1,))[0]
        assert f"prediction: {expected:.17g}" in out
        assert "area: 1->1" in out
        assert "network id: 0" in out

    def test_npy_input(self, tmp_path, model_file, capsys):
        path, _ = model_file
        np.save(str(tmp_path / "x.npy"), np.array([0.25]))
        assert cli.main(["predict", "--model", str(path), "--input", str(tmp_path / "x.npy"), "--output-shape", "1"]) == 0
        assert "network id: 0" in capsys.readouterr().out

    def test_malformed_input(self, tmp_path, model_file, capsys):
        path, _ = model_file
        (tmp_path / "x.txt").write_text("half\n")
        assert cli.main(["predict", "--model", str(path), "--input", str(tmp_path / "x.txt")]) == 1
        assert "cannot parse" in capsys.readouterr().err

    def test_unknown_input_shape(self, tmp_path, model_file, capsys):
        path, _ = model_file
        (tmp_path / "x.txt").write_text("0.5, 0.25\n")
        assert cli.main(["predict", "--model", str(path), "--input", str(tmp_path / "x.txt")]) == 1
        assert "no association area" in capsys.readouterr().err

    def test_missing_model(self, tmp_path, capsys):
        (tmp_path / "x.txt").write_text("0.5\n")
        assert cli.main(["predict", "--model", str(tmp_path / "absent.crtx"), "--input", str(tmp_path / "x.txt")]) == 1
        assert capsys.readouterr().err.startswith("error:")


class TestVerifyBound:

    def test_small_grid_passes(self, tmp_path, capsys):
        config = _write(tmp_path, "bound.toml", BOUND)
        assert cli.main(["--log-level", "warning", "verify-bound", "--config", str(config)]) == 0
        out = capsys.readouterr().out
        assert "4 cell(s), 0 counterexample(s), 0 Monte Carlo disagreement(s)" in out
        assert len(pd.read_csv(tmp_path / "out" / "bound.csv")) == 4

    def test_disagreeing_cells_are_listed(self, tmp_path, capsys):
        config = _write(tmp_path, "bound.toml", BOUND, z=1e-9)
        assert cli.main(["--log-level", "error", "verify-bound", "--config", str(config)]) == 1
        captured = capsys.readouterr()
        assert "4 cell(s), 0 counterexample(s), 4 Monte Carlo disagreement(s)" in captured.out
        assert captured.out.count("disagreement: t=") == 4
        assert "disagreement: t=2.5 k=2 N=4 " in captured.out
        assert "the reflection bound check failed" in captured.err

    def test_agreement_band_must_be_positive(self, tmp_path, capsys):
        config = _write(tmp_path, "bound.toml", BOUND, z=0.0)
        assert cli.main(["verify-bound", "--config", str(config)]) == 1
        assert "bound.agreement_z must be > 0" in capsys.readouterr().err

    def test_needs_a_bound_config(self, tmp_path, capsys):
        config = _write(tmp_path, "fn.toml", FNAPPROX)
        assert cli.main(["verify-bound", "--config", str(config)]) == 1
        assert "needs a verify-bound config" in capsys.readouterr().err


class TestOtherCommands:

    def test_gen_data(self, tmp_path, capsys):
        config = _write(tmp_path, "fn.toml", FNAPPROX)
        assert cli.main(["gen-data", "--config", str(config), "--take", "25"]) == 0
        assert "function.csv" in capsys.readouterr().out
        assert len(pd.read_csv(tmp_path / "out" / "function.csv")) == 25

    def test_report(self, tmp_path, capsys):
        config = _write(tmp_path, "bound.toml", BOUND)
        cli.main(["verify-bound", "--config", str(config)])
        capsys.readouterr()
        assert cli.main(["report", "--out", str(tmp_path / "out")]) == 0
        out = capsys.readouterr().out
        assert "bound:" in out
        assert "timing:" in out

    def test_report_on_an_empty_directory(self, tmp_path, capsys):
        assert cli.main(["report", "--out", str(tmp_path)]) == 1
        assert "no metrics.csv or bound.csv" in capsys.readouterr().err

    def test_missing_config(self, tmp_path, capsys):
        assert cli.main(["train", "--config", str(tmp_path / "absent.toml")]) == 1
        assert "file not found" in capsys.readouterr().err

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            cli.main(["fly"])


def test_read_input_rejects_empty_files(tmp_path):
    (tmp_path / "x.txt").write_text("  \n")
    with pytest.raises(ValueError, match="no numbers"):
        cli.read_input(tmp_path / "x.txt")
