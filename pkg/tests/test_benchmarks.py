import numpy as np
import numpy.testing as npt
import pytest

from bistablernn.benchmarks import (CopyFirst, Denoising, IdxCountMismatchError,
                                    IdxHeaderError, IdxTruncatedError, MnistData,
                                    SampleSpec, SeqMnist, SparseCopy,
                                    baseline_mse, downsample_image,
                                    gen_copy_first, gen_denoising,
                                    gen_sparse_copy, load_idx_images,
                                    load_idx_labels, load_mnist,
                                    make_benchmark, pad_image_to_32,
                                    seq_mnist_sample, synthetic_digit_images,
                                    write_idx_images, write_idx_labels)
from bistablernn.numerics import ContractError, Rng


class TestCopyFirst:
    def test_target_is_first_input(self):
        for seed in range(5):
            inputs, target = gen_copy_first(30, Rng(seed))
            assert inputs.shape == (30, 1)
            npt.assert_array_equal(target, inputs[0])

    def test_input_statistics(self):
        rng = Rng(123)
        values = np.concatenate([gen_copy_first(10, rng)[0].ravel()
                                 for _ in range(1000)])
        assert abs(values.mean()) < 0.05
        assert 0.95 <= values.std() <= 1.05

    def test_predict_zero_mse_near_one(self):
        # Guessing 0 scores the target variance, i.e. about 1.
        mse = baseline_mse(CopyFirst(600), 10_000, Rng(7))
        assert abs(mse - 1.0) <= 0.05

    def test_rejects_empty(self):
        with pytest.raises(ContractError):
            gen_copy_first(0, Rng(0))


class TestDenoising:
    def test_marker_counts(self):
        for seed in range(10):
            inputs, _ = gen_denoising(50, 20, Rng(seed))
            ch = inputs[:, 0]
            assert (ch == 0.0).sum() == 5
            assert (ch == 1.0).sum() == 1
            assert ch[-1] == 1.0
            assert (ch == -1.0).sum() == 44

    def test_boundary_all_markers_in_first_five_steps(self):
        inputs, _ = gen_denoising(40, 35, Rng(3))
        marked = np.flatnonzero(inputs[:, 0] == 0.0)
        npt.assert_array_equal(marked, np.arange(5))

    def test_markers_respect_forgetting_period(self):
        for seed in range(20):
            T, N = 60, 25
            inputs, _ = gen_denoising(T, N, Rng(seed))
            marked = np.flatnonzero(inputs[:, 0] == 0.0)
            assert marked.max() < T - N

    def test_target_self_consistency_scan(self):
        # Re-scan the emitted sample: decoding the marker channel must
        # recover exactly the values used to build the label.
        for seed in range(10):
            inputs, target = gen_denoising(80, 30, Rng(seed))
            marked = np.flatnonzero(inputs[:, 0] == 0.0)
            npt.assert_array_equal(target, inputs[marked, 1])

    def test_zero_forgetting_period_never_collides_with_end_flag(self):
        for seed in range(20):
            inputs, _ = gen_denoising(10, 0, Rng(seed))
            assert (inputs[:, 0] == 0.0).sum() == 5
            assert inputs[-1, 0] == 1.0

    def test_infeasible_specs_rejected(self):
        with pytest.raises(ContractError):
            gen_denoising(20, 16, Rng(0))   # only 4 slots
        with pytest.raises(ContractError):
            gen_denoising(5, 0, Rng(0))     # end flag leaves 4 slots
        with pytest.raises(ContractError):
            Denoising(30, -1)

    def test_predict_zero_mse_near_one(self):
        mse = baseline_mse(Denoising(60, 25), 10_000, Rng(8))
        assert abs(mse - 1.0) <= 0.05


class TestSparseCopy:
    def test_single_nonzero_equals_target(self):
        for seed in range(10):
            inputs, target = gen_sparse_copy(40, Rng(seed))
            nz = np.flatnonzero(inputs.ravel())
            assert len(nz) <= 1
            if len(nz) == 1:
                npt.assert_array_equal(target, [inputs[nz[0], 0]])

    def test_position_uniformity_chi_squared(self):
        T = 20
        rng = Rng(99)
        counts = np.zeros(T)
        n = 100_000
        for _ in range(n):
            inputs, _ = gen_sparse_copy(T, rng)
            nz = np.flatnonzero(inputs.ravel())
            counts[nz[0]] += 1
        expected = n / T
        stat = float(((counts - expected) ** 2 / expected).sum())
        # chi-square critical value, p = 0.01, df = 19
        assert stat < 36.19086912927004

    def test_single_step_sequence(self):
        inputs, target = gen_sparse_copy(1, Rng(5))
        assert inputs.shape == (1, 1)
        npt.assert_array_equal(target, inputs[0])

    def test_predict_zero_mse_near_one(self):
        mse = baseline_mse(SparseCopy(100), 10_000, Rng(9))
        assert abs(mse - 1.0) <= 0.05


class TestDeterminism:
    @pytest.mark.parametrize("make", [
        lambda: CopyFirst(25),
        lambda: Denoising(30, 10),
        lambda: SparseCopy(25),
    ])
    def test_same_seed_same_stream(self, make):
        b = make()
        x1, y1 = b.sample_batch(20, Rng(42))
        x2, y2 = b.sample_batch(20, Rng(42))
        npt.assert_array_equal(x1, x2)
        npt.assert_array_equal(y1, y2)

    def test_batch_extends_the_single_sample_stream(self):
        b = Denoising(30, 10)
        rng = Rng(17)
        singles = [b.sample(Rng(17)) for _ in range(1)]
        batch_x, batch_y = b.sample_batch(1, rng)
        npt.assert_array_equal(batch_x[0], singles[0][0])
        npt.assert_array_equal(batch_y[0], singles[0][1])


class TestIdxFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = Rng(1)
        images = rng.integers(0, 256, (4, 28, 28)).astype(np.uint8)
        labels = rng.integers(0, 10, 4).astype(np.uint8)
        ipath, lpath = tmp_path / "img.idx", tmp_path / "lab.idx"
        write_idx_images(ipath, images)
        write_idx_labels(lpath, labels)
        data = load_mnist(ipath, lpath)
        npt.assert_array_equal(data.images, images)
        npt.assert_array_equal(data.labels, labels)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(b"\x00\x00\x08\x99" + b"\x00" * 12)
        with pytest.raises(IdxHeaderError):
            load_idx_images(path)
        with pytest.raises(IdxHeaderError):
            load_idx_labels(tmp_path / "bad.idx")

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "trunc.idx"
        write_idx_images(path, np.zeros((2, 4, 4), dtype=np.uint8))
        raw = path.read_bytes()
        path.write_bytes(raw[:-5])
        with pytest.raises(IdxTruncatedError):
            load_idx_images(path)

    def test_truncated_header_rejected(self, tmp_path):
        path = tmp_path / "short.idx"
        path.write_bytes(b"\x00\x00\x08\x03\x00")
        with pytest.raises(IdxTruncatedError):
            load_idx_images(path)

    def test_count_mismatch_rejected(self, tmp_path):
        write_idx_images(tmp_path / "i.idx", np.zeros((3, 4, 4), dtype=np.uint8))
        write_idx_labels(tmp_path / "l.idx", np.zeros(2, dtype=np.uint8))
        with pytest.raises(IdxCountMismatchError):
            load_mnist(tmp_path / "i.idx", tmp_path / "l.idx")

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "extra.idx"
        write_idx_labels(path, np.zeros(3, dtype=np.uint8))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(IdxHeaderError):
            load_idx_labels(path)


class TestSeqMnist:
    def test_sequence_length_784_without_padding(self):
        img = Rng(2).integers(0, 256, (28, 28)).astype(np.uint8)
        seq = seq_mnist_sample(img, n_black=0)
        assert seq.shape == (784, 1)
        assert seq.min() >= 0.0 and seq.max() <= 1.0

    def test_row_major_flattening_and_scaling(self):
        img = np.zeros((28, 28), dtype=np.uint8)
        img[0, 1] = 255
        img[1, 0] = 51
        seq = seq_mnist_sample(img)
        assert seq[1, 0] == 1.0
        assert seq[28, 0] == 51.0 / 255.0

    def test_all_black_with_tail(self):
        seq = seq_mnist_sample(np.zeros((28, 28), dtype=np.uint8), n_black=300)
        assert seq.shape == (1084, 1)
        npt.assert_array_equal(seq, np.zeros((1084, 1)))

    def test_pad32_gives_1024_steps(self):
        img = Rng(3).integers(0, 256, (28, 28)).astype(np.uint8)
        seq = seq_mnist_sample(img, pad32=True)
        assert seq.shape == (1024, 1)

    def test_downsample_preserves_mean(self):
        img = Rng(4).integers(0, 256, (28, 28)).astype(np.uint8)
        small = downsample_image(img.astype(np.float64), 7)
        # 28 = 4*7: uniform bins, so the overall mean is preserved exactly
        npt.assert_allclose(small.mean(), img.mean(), rtol=1e-12)
        assert small.shape == (7, 7)

    def test_downsample_ragged_bins(self):
        img = np.ones((28, 28))
        small = downsample_image(img, 8)
        npt.assert_allclose(small, np.ones((8, 8)), rtol=1e-12)

    def test_pad_centers_image(self):
        img = np.full((28, 28), 9, dtype=np.uint8)
        padded = pad_image_to_32(img)
        assert padded.shape == (32, 32)
        assert padded[:2].sum() == 0 and padded[-2:].sum() == 0
        assert padded[2:30, 2:30].min() == 9

    def test_benchmark_object(self):
        data = synthetic_digit_images(30, Rng(5))
        bench = SeqMnist(data, n_black=10, downsample=8)
        assert bench.T == 74
        x, y = bench.sample_batch(6, Rng(6))
        assert x.shape == (6, 74, 1)
        assert y.shape == (6,) and y.dtype == np.int64
        assert set(y) <= set(range(10))

    def test_make_benchmark_requires_data(self):
        with pytest.raises(ContractError):
            make_benchmark(SampleSpec("seq_mnist", n_black=5))

    def test_synthetic_images_deterministic(self):
        a = synthetic_digit_images(8, Rng(11))
        b = synthetic_digit_images(8, Rng(11))
        npt.assert_array_equal(a.images, b.images)
        npt.assert_array_equal(a.labels, b.labels)


class TestMakeBenchmark:
    def test_dispatch(self):
        assert isinstance(make_benchmark(SampleSpec("copy_first", T=10)), CopyFirst)
        assert isinstance(make_benchmark(SampleSpec("denoising", T=20, N=5)), Denoising)
        assert isinstance(make_benchmark(SampleSpec("sparse_copy", T=10)), SparseCopy)
        with pytest.raises(ContractError):
            make_benchmark(SampleSpec("nope", T=10))
