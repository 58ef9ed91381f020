"""Container round-trip tests for the binary weight format."""

import numpy as np
import pytest

from hsiseg.datacube import SpectralCube
from hsiseg.errors import MalformedFileError, UnsupportedFormatError
from hsiseg.features import SmcaeSpec, encode_smcae, learn_ica_filters, train_smcae
from hsiseg.features.smcae import reconstruction_losses
from hsiseg.mlp import MlpSpec, predict_proba, train
from hsiseg.serialize import (
    history_to_csv,
    load_arrays,
    load_filter_bank,
    load_mlp,
    load_smcae,
    save_arrays,
    save_filter_bank,
    save_mlp,
    save_smcae,
)


def rand_cube(seed, h=20, w=20, b=3):
    rng = np.random.default_rng(seed)
    return SpectralCube(
        values=rng.uniform(0.2, 1.0, (h, w, b)),
        wavelengths=np.arange(b, dtype=float) + 1.0,
    )


class TestRawContainer:
    def test_round_trip_preserves_bits_and_order(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "zeta": rng.normal(0, 1, (3, 4, 2)).astype(np.float32),
            "alpha": rng.normal(0, 1, (7,)).astype(np.float32),
            "scalar": np.float32(2.5),
            "empty": np.zeros((0, 5), dtype=np.float32),
        }
        path = tmp_path / "weights.bin"
        save_arrays(path, arrays)
        loaded = load_arrays(path)
        assert list(loaded) == ["zeta", "alpha", "scalar", "empty"]
        for name in arrays:
            got = loaded[name]
            want = np.asarray(arrays[name], dtype=np.float32)
            assert got.shape == want.shape
            np.testing.assert_array_equal(got, want)

    def test_save_is_byte_stable(self, tmp_path):
        arrays = {"w": np.arange(12, dtype=np.float32).reshape(3, 4)}
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_arrays(a, arrays)
        save_arrays(b, arrays)
        assert a.read_bytes() == b.read_bytes()

    def test_float64_input_is_stored_float32(self, tmp_path):
        path = tmp_path / "w.bin"
        save_arrays(path, {"x": np.array([1.0 / 3.0])})
        out = load_arrays(path)["x"]
        assert out.dtype == np.float32
        assert out[0] == np.float32(1.0 / 3.0)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "w.bin"
        save_arrays(path, {"x": np.zeros(2, dtype=np.float32)})
        raw = bytearray(path.read_bytes())
        raw[:4] = b"JUNK"
        path.write_bytes(bytes(raw))
        with pytest.raises(MalformedFileError):
            load_arrays(path)

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "w.bin"
        save_arrays(path, {"x": np.zeros(2, dtype=np.float32)})
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedFormatError):
            load_arrays(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "w.bin"
        save_arrays(path, {"x": np.zeros(100, dtype=np.float32)})
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(MalformedFileError):
            load_arrays(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "w.bin"
        save_arrays(path, {"x": np.zeros(2, dtype=np.float32)})
        path.write_bytes(path.read_bytes() + b"\x00\x01")
        with pytest.raises(MalformedFileError):
            load_arrays(path)

    def test_empty_container(self, tmp_path):
        path = tmp_path / "w.bin"
        save_arrays(path, {})
        assert load_arrays(path) == {}


class TestFilterBankRoundTrip:
    def test_fields_survive(self, tmp_path):
        bank = learn_ica_filters(rand_cube(3, 30, 30, 4), k=5, f=3,
                                 n_patches=400, seed=7)
        path = tmp_path / "bank.bin"
        save_filter_bank(path, bank)
        back = load_filter_bank(path)
        np.testing.assert_array_equal(back.filters, bank.filters)
        np.testing.assert_array_equal(back.whitening, bank.whitening)
        np.testing.assert_array_equal(back.mean, bank.mean)
        assert back.converged == bank.converged
        assert back.n_iter == bank.n_iter


class TestSmcaeRoundTrip:
    def test_reloaded_model_encodes_identically(self, tmp_path):
        cube = rand_cube(4, 16, 16, 3)
        spec = SmcaeSpec(
            channels=(4, 6), kernel_size=3, loss_weights=(1.0, 0.5),
            patch_size=8, n_patches=10, epochs=3, feature_mode="final",
        )
        model = train_smcae(cube, spec, seed=0)
        path = tmp_path / "smcae.bin"
        save_smcae(path, model)
        back = load_smcae(path)
        assert back.spec.channels == spec.channels
        assert back.spec.kernel_size == spec.kernel_size
        assert back.spec.patch_size == spec.patch_size
        assert back.spec.feature_mode == spec.feature_mode
        assert back.spec.loss_weights == spec.loss_weights
        assert back.spec.learning_rate == pytest.approx(spec.learning_rate,
                                                        rel=1e-6)
        assert back.n_bands == model.n_bands
        np.testing.assert_array_equal(
            encode_smcae(cube, back).values, encode_smcae(cube, model).values
        )
        probe = cube.values[:8, :8, :]
        np.testing.assert_allclose(
            reconstruction_losses(back, probe),
            reconstruction_losses(model, probe),
        )
        np.testing.assert_allclose(back.loss_history, model.loss_history,
                                   rtol=1e-6)


class TestMlpRoundTrip:
    def test_reloaded_model_predicts_identically(self, tmp_path):
        rng = np.random.default_rng(5)
        x = rng.normal(0, 1, (40, 4))
        y = rng.integers(1, 4, 40)
        spec = MlpSpec(input_dim=4, num_classes=3, weight_decay=1e-4)
        model = train(spec, x[:30], y[:30], x[30:], y[30:], seed=2,
                      max_epochs=10)
        path = tmp_path / "mlp.bin"
        save_mlp(path, model)
        back = load_mlp(path)
        assert back.spec.units == spec.units
        assert back.spec.num_classes == spec.num_classes
        assert back.best_epoch == model.best_epoch
        assert back.stop_reason == model.stop_reason
        assert back.best_val_loss == pytest.approx(model.best_val_loss,
                                                   rel=1e-6)
        cube = rng.normal(0, 1, (5, 6, 4))
        np.testing.assert_array_equal(
            predict_proba(back, cube), predict_proba(model, cube)
        )
        assert len(back.history) == len(model.history)
        assert [h[0] for h in back.history] == [h[0] for h in model.history]


class TestHistoryCsv:
    def test_columns_and_rows(self, tmp_path):
        history = [(0, 1.5, 1.7, 0.002), (1, 1.2, 1.4, 0.002)]
        path = tmp_path / "hist.csv"
        history_to_csv(path, history)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "epoch,train_loss,val_loss,lr"
        assert lines[1].startswith("0,1.5,1.7,")
        assert len(lines) == 3
