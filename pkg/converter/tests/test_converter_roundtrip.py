import numpy as np
import pytest

from toynet import (toy_arrays, toy_schedule, write_flat_mat, write_flat_npz,
                      write_simplenn_mat)
from vgfm_convert.checkpoint import CheckpointError, load_checkpoint
from vgfm_convert.cli import main
from vgfm_convert.container import read_header
from vgfm_convert.convert import ConvertError, convert

# The primary engine's loader is the read-back oracle for conversions.
from vgface.network import load_weights


class TestFlatSources:
    def test_npz_round_trip_bit_exact(self, tmp_path):
        arrays = toy_arrays()
        source = write_flat_npz(tmp_path / "toy.npz", arrays, mean=[1, 2, 3])
        out = tmp_path / "toy.vgfm"
        convert(source, out, schedule=toy_schedule())
        spec, store = load_weights(out)
        assert spec.normalization_mean == (1.0, 2.0, 3.0)
        for name, (w, b) in arrays.items():
            np.testing.assert_array_equal(store.get(name).weights.data,
                                          w.transpose(3, 2, 0, 1))
            np.testing.assert_array_equal(store.get(name).bias.data, b)

    def test_flat_mat_round_trip(self, tmp_path):
        arrays = toy_arrays(seed=8)
        source = write_flat_mat(tmp_path / "toy.mat", arrays, mean=[4, 5, 6])
        out = tmp_path / "toy.vgfm"
        convert(source, out, schedule=toy_schedule())
        _, store = load_weights(out)
        np.testing.assert_array_equal(store.get("conv2").weights.data,
                                      arrays["conv2"][0].transpose(3, 2, 0, 1))

    def test_oihw_layout_skips_transpose(self, tmp_path):
        arrays = {name: (w.transpose(3, 2, 0, 1).copy(), b)
                  for name, (w, b) in toy_arrays(seed=9).items()}
        source = write_flat_npz(tmp_path / "toy.npz", arrays, mean=[0, 0, 0])
        out = tmp_path / "toy.vgfm"
        convert(source, out, schedule=toy_schedule(), layout="oihw")
        _, store = load_weights(out)
        np.testing.assert_array_equal(store.get("conv1").weights.data,
                                      arrays["conv1"][0])


class TestStructSources:
    def test_simplenn_round_trip_with_mean_vector(self, tmp_path):
        arrays = toy_arrays(seed=10)
        source = write_simplenn_mat(tmp_path / "net.mat", arrays,
                                    mean=[9.0, 8.0, 7.0])
        out = tmp_path / "net.vgfm"
        convert(source, out, schedule=toy_schedule())
        spec, store = load_weights(out)
        assert spec.normalization_mean == (9.0, 8.0, 7.0)
        np.testing.assert_array_equal(store.get("conv1").weights.data,
                                      arrays["conv1"][0].transpose(3, 2, 0, 1))

    def test_average_image_reduced_to_channel_means(self, tmp_path):
        arrays = toy_arrays(seed=11)
        avg = np.zeros((6, 6, 3))
        avg[:, :, 0] = 10.0
        avg[:, :, 1] = 20.0
        avg[:, :, 2] = 30.0
        source = write_simplenn_mat(tmp_path / "net.mat", arrays,
                                    average_image=avg)
        out = tmp_path / "net.vgfm"
        convert(source, out, schedule=toy_schedule())
        spec, _ = load_weights(out)
        assert spec.normalization_mean == (10.0, 20.0, 30.0)

    def test_classifier_tail_is_ignored(self, tmp_path, capsys):
        arrays = toy_arrays(seed=12)
        arrays["fc_classifier"] = (
            np.ones((1, 1, 2, 5), dtype=np.float32),
            np.zeros(5, dtype=np.float32))
        source = write_simplenn_mat(
            tmp_path / "net.mat", arrays, mean=[0, 0, 0],
            extra_layers=({"type": "softmax", "name": "prob"},))
        out = tmp_path / "net.vgfm"
        convert(source, out, schedule=toy_schedule())
        _, store = load_weights(out)
        assert set(store.names()) == {"conv1", "conv2"}


class TestMeans:
    def test_flag_beats_metadata(self, tmp_path):
        source = write_flat_npz(tmp_path / "toy.npz", toy_arrays(),
                                mean=[1, 1, 1])
        out = tmp_path / "toy.vgfm"
        convert(source, out, mean=(7.0, 8.0, 9.0), schedule=toy_schedule())
        header = read_header(out)
        assert header["normalization_mean"] == [7.0, 8.0, 9.0]

    def test_no_means_anywhere_is_an_error(self, tmp_path):
        source = write_flat_npz(tmp_path / "toy.npz", toy_arrays())
        with pytest.raises(ConvertError, match="--mean"):
            convert(source, tmp_path / "toy.vgfm", schedule=toy_schedule())

    def test_wrong_mean_arity_rejected(self, tmp_path):
        source = write_flat_npz(tmp_path / "toy.npz", toy_arrays())
        with pytest.raises(ConvertError, match="channels"):
            convert(source, tmp_path / "toy.vgfm", mean=(1.0,),
                    schedule=toy_schedule())


class TestValidation:
    def test_missing_layer_lists_absentees(self, tmp_path):
        arrays = toy_arrays()
        del arrays["conv2"]
        source = write_flat_npz(tmp_path / "toy.npz", arrays, mean=[0, 0, 0])
        out = tmp_path / "toy.vgfm"
        with pytest.raises(ConvertError, match="conv2"):
            convert(source, out, schedule=toy_schedule())
        assert not out.exists()

    def test_shape_mismatch_reports_expected_and_found(self, tmp_path):
        arrays = toy_arrays()
        w, b = arrays["conv1"]
        arrays["conv1"] = (w[:2], b)  # 2x3 filter instead of 3x3
        source = write_flat_npz(tmp_path / "toy.npz", arrays, mean=[0, 0, 0])
        with pytest.raises(ConvertError, match=r"expected source weights"):
            convert(source, tmp_path / "toy.vgfm", schedule=toy_schedule())

    def test_default_schedule_demands_canonical_layers(self, tmp_path):
        source = write_flat_npz(tmp_path / "toy.npz", toy_arrays(),
                                mean=[0, 0, 0])
        with pytest.raises(ConvertError, match="conv1_1"):
            convert(source, tmp_path / "toy.vgfm")  # no schedule: canonical

    def test_canonical_shape_mismatch_names_layer(self, tmp_path):
        arrays = {}
        from vgfm_convert.schedule import canonical_schedule, conv_layers

        for layer in conv_layers(canonical_schedule()):
            arrays[layer["name"]] = (np.ones((1, 1, 1, 1), dtype=np.float32),
                                     np.zeros(1, dtype=np.float32))
        source = write_flat_npz(tmp_path / "bad.npz", arrays, mean=[0, 0, 0])
        with pytest.raises(ConvertError,
                           match=r"conv1_1.*expected source weights \(3, 3, 3, 64\)"):
            convert(source, tmp_path / "bad.vgfm")

    def test_truncated_source_leaves_no_output(self, tmp_path):
        source = write_flat_npz(tmp_path / "toy.npz", toy_arrays(),
                                mean=[0, 0, 0])
        source.write_bytes(source.read_bytes()[:40])
        out = tmp_path / "toy.vgfm"
        with pytest.raises(CheckpointError):
            convert(source, out, schedule=toy_schedule())
        assert not out.exists()

    def test_unknown_extension_rejected(self, tmp_path):
        path = tmp_path / "weights.bin"
        path.write_bytes(b"\x00" * 32)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestCli:
    def test_convert_command(self, tmp_path, toy_setup):
        out = tmp_path / "toy.vgfm"
        code = main(["convert", "--in", str(toy_setup["checkpoint"]),
                     "--out", str(out), "--schedule", str(toy_setup["schedule"])])
        assert code == 0
        header = read_header(out)
        assert header["normalization_mean"] == [5.0, 10.0, 15.0]

    def test_convert_missing_source_is_data_error(self, tmp_path):
        code = main(["convert", "--in", str(tmp_path / "nope.npz"),
                     "--out", str(tmp_path / "o.vgfm")])
        assert code == 2

    def test_bad_mean_flag_is_usage_error(self, tmp_path, toy_setup):
        code = main(["convert", "--in", str(toy_setup["checkpoint"]),
                     "--out", str(tmp_path / "o.vgfm"), "--mean", "a,b,c"])
        assert code == 1
