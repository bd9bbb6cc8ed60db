import numpy as np
import pytest

from kitbench.errors import MalformedModelError, ModelIOError, ModelVersionError
from kitbench.kitnet import ThresholdCalibration
from kitbench.persistence import dumps_model, load_model, loads_model, save_model


def test_round_trip_scores_are_bit_identical(small_model, tmp_path, rng):
    model, calib = small_model
    save_model(model, calib, tmp_path / "m.txt")
    back, back_calib = load_model(tmp_path / "m.txt")
    assert back_calib == calib
    for _ in range(100):
        x = rng.uniform(0, 10, model.n_features)
        assert back.score(x) == model.score(x)
        np.testing.assert_array_equal(back.score_gradient(x), model.score_gradient(x))


def test_round_trip_is_byte_identical(small_model, tmp_path):
    model, calib = small_model
    save_model(model, calib, tmp_path / "a.txt")
    save_model(*load_model(tmp_path / "a.txt"), tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_section_order(small_model):
    text = dumps_model(*small_model)
    heads = [ln.split()[0] for ln in text.splitlines()
             if ln and ln[0].isalpha() and not ln.startswith(("n=",))]
    order = ["KITBENCH-MODEL", "input_normalizer", "feature_map", "autoencoder",
             "score_normalizer", "output_autoencoder", "calibration", "end"]
    firsts = [heads.index(h) for h in order]
    assert firsts == sorted(firsts)


def test_calibration_optional(small_model):
    model, _ = small_model
    back, calib = loads_model(dumps_model(model, None))
    assert calib is None
    assert back.n_clusters == model.n_clusters


def test_truncated_file_is_malformed(small_model):
    text = dumps_model(*small_model)
    for cut in (len(text) // 3, len(text) // 2, len(text) - 5):
        with pytest.raises(MalformedModelError):
            loads_model(text[:cut])


def test_unknown_version(small_model):
    text = dumps_model(*small_model).replace("KITBENCH-MODEL v1", "KITBENCH-MODEL v9", 1)
    with pytest.raises(ModelVersionError):
        loads_model(text)


@pytest.mark.parametrize("mutate", [
    lambda t: "hello\n" + t,
    lambda t: t.replace("feature_map", "featuremap", 1),
    lambda t: t.replace("calibration phi=", "calibration phi=x", 1),
    lambda t: t + "extra\n",
    lambda t: t.replace("beta_threshold=1.0", "beta_threshold=0.5", 1),
])
def test_corrupted_files_are_malformed(small_model, mutate):
    with pytest.raises(MalformedModelError):
        loads_model(mutate(dumps_model(*small_model)))


def test_io_failures(tmp_path, small_model):
    with pytest.raises(ModelIOError):
        load_model(tmp_path / "missing.txt")
    (tmp_path / "dir").mkdir()
    with pytest.raises(ModelIOError):
        save_model(*small_model, tmp_path / "dir")
    (tmp_path / "bin").write_bytes(b"\xff\xfe\x00")
    with pytest.raises(MalformedModelError):
        load_model(tmp_path / "bin")


def test_calibration_survives(small_model):
    model, calib = small_model
    new = ThresholdCalibration(calib.phi, 1.25)
    _, back = loads_model(dumps_model(model, new))
    assert back.threshold == new.threshold
