"""Acceptance criteria, one test class per criterion.

Each test carries ``@pytest.mark.criterion(n)``; the terminal summary prints
one PASS/FAIL line per criterion. Tolerances and runtimes are the stated ones.
"""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

import oracles
from gradcheck import op_gradient_errors
from pcvit import tensor as T
from pcvit import vit
from pcvit.cli import main
from pcvit.dataset import LabeledDataset, SplitSpec, build_dataset, class_dirs_from_root, split, split_indices
from pcvit.metrics import accuracy_macro_pr, auc, auc_rank, confusion_matrix, roc_curve
from pcvit.pseudocolor import JET_LUT, jet_map
from pcvit.synthetic import write_toy_tree
from pcvit.tensor import Tensor
from pcvit.trainer import TrainingConfig, cross_entropy, train
from pcvit.vit import ViTConfig, ViTParams, forward, forward_logits, init_params, param_shapes


def _random_arrays(config, rng, std=0.3):
    arrays = {k: rng.normal(0, std, s) for k, s in param_shapes(config).items()}
    for k in arrays:
        if k.endswith(".gamma"):
            arrays[k] = 1.0 + arrays[k]
    return arrays


# -- 1 ---------------------------------------------------------------------------


OP_CASES = [
    ("matmul", T.matmul, [(3, 4), (4, 2)]),
    ("batched_matmul", T.matmul, [(2, 3, 4), (4, 5)]),
    ("add", T.add, [(3, 4), (4,)]),
    ("sub", T.sub, [(3, 4), (3, 1)]),
    ("mul", T.mul, [(2, 3), (2, 3)]),
    ("scale", lambda x: T.scale(x, 0.37), [(6,)]),
    ("gelu", T.gelu, [(10,)]),
    ("softmax", T.softmax, [(3, 8)]),
    ("log_softmax", T.log_softmax, [(3, 8)]),
    ("layer_norm", lambda x, g, b: T.layer_norm(x, g, b), [(4, 6), (6,), (6,)]),
    ("transpose", lambda x: T.transpose(x, (1, 0, 2)), [(2, 3, 4)]),
    ("reshape", lambda x: T.reshape(x, (4, 3)), [(2, 6)]),
    ("concat", lambda a, b: T.concat([a, b], axis=0), [(2, 3), (1, 3)]),
    ("slice", lambda x: x[:, 0, :], [(2, 3, 4)]),
    ("sum", lambda x: T.tsum(x, axis=-1), [(3, 5)]),
    ("mean", T.mean, [(3, 5)]),
]
SEEDS_PER_OP = 7


@pytest.mark.criterion(1)
class TestGradientSuite:
    def test_ops_and_tiny_vit(self):
        start = time.perf_counter()
        worst = {}
        cases = 0
        for name, fn, shapes in OP_CASES:
            for seed in range(SEEDS_PER_OP):
                rng = np.random.default_rng(1000 * seed + len(name))
                errs = op_gradient_errors(fn, [rng.uniform(-2, 2, s) for s in shapes], rng)
                worst[name] = max(worst.get(name, 0.0), *errs)
                cases += 1

        cfg = ViTConfig(image_size=32, patch_size=16, hidden_dim=8, num_heads=2, num_layers=2, mlp_dim=16)
        for seed in range(2):
            rng = np.random.default_rng(seed)
            arrays = _random_arrays(cfg, rng)
            images = rng.uniform(0, 1, (2, 3, 32, 32))
            labels = rng.integers(0, 4, 2)
            names = list(arrays)

            with T.precision(np.float64):
                params = ViTParams.from_arrays(cfg, arrays)
                T.backward(cross_entropy(forward_logits(images, params), labels))
                analytic = {k: params[k].grad for k in names}

                def loss(*arrs):
                    p = ViTParams.from_arrays(cfg, dict(zip(names, arrs)), requires_grad=False)
                    with T.no_grad():
                        return cross_entropy(forward_logits(images, p), labels).item()

                numeric = oracles.central_difference(loss, [arrays[k] for k in names])
            for k, num in zip(names, numeric):
                err = oracles.relative_error(analytic[k], num)
                worst[f"vit:{k}"] = max(worst.get(f"vit:{k}", 0.0), err)
                cases += 1

        elapsed = time.perf_counter() - start
        top = max(worst, key=worst.get)
        print(f"\n[criterion 1] {cases} cases, worst relative error {worst[top]:.2e} ({top}), {elapsed:.1f} s")
        assert cases >= 100
        assert all(e <= oracles.FD_TOL for e in worst.values()), {k: v for k, v in worst.items() if v > 1e-3}
        assert elapsed < 120


# -- 2 ---------------------------------------------------------------------------


@pytest.mark.criterion(2)
class TestNormalizationSuite:
    def test_softmax_rows(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            shape = tuple(rng.integers(1, 9, size=rng.integers(1, 4)))
            x = rng.normal(0, rng.choice([0.1, 1, 10, 100]), shape).astype(np.float32)
            y = T.softmax(Tensor(x)).data
            assert np.abs(y.sum(axis=-1) - 1).max() <= 1e-6
            assert (y >= 0).all()

    def test_attention_and_output_over_random_configs(self, monkeypatch):
        rng = np.random.default_rng(22)
        recorded = []
        original = vit.attention_weights

        def spy(q, k):
            w = original(q, k)
            recorded.append(w.data)
            return w

        monkeypatch.setattr(vit, "attention_weights", spy)
        for _ in range(40):
            patch = int(rng.choice([4, 8, 16]))
            heads = int(rng.integers(1, 4))
            cfg = ViTConfig(
                image_size=patch * int(rng.integers(1, 4)), patch_size=patch,
                hidden_dim=heads * int(rng.integers(1, 5)), num_heads=heads,
                num_layers=int(rng.integers(1, 4)), mlp_dim=int(rng.integers(1, 17)),
                post_ln=bool(rng.integers(0, 2)),
            )
            params = ViTParams.from_arrays(cfg, _random_arrays(cfg, rng, std=float(rng.choice([0.02, 0.5, 2.0]))))
            recorded.clear()
            probs = forward(rng.uniform(0, 1, (int(rng.integers(1, 5)), 3, cfg.image_size, cfg.image_size)), params)
            assert len(recorded) == cfg.num_layers
            for w in recorded:
                assert (w >= 0).all() and np.abs(w.sum(axis=-1) - 1).max() <= 1e-6
            p = probs.data
            assert p.shape[1] == 4
            assert (p >= 0).all() and (p <= 1).all()
            assert np.abs(p.sum(axis=1) - 1).max() <= 1e-6


# -- 3 ---------------------------------------------------------------------------


@pytest.mark.criterion(3)
class TestColormapSuite:
    def test_all_intensities_against_piecewise_formula(self):
        got = jet_map(np.arange(256, dtype=np.uint8))
        for i in range(256):
            v = Fraction(i, 255)
            for c, k in enumerate((3, 2, 1)):
                exact = min(max(Fraction(3, 2) - abs(4 * v - k), Fraction(0)), Fraction(1))
                assert got[i, c] == np.float32(float(exact)), (i, c)

    def test_endpoints(self):
        assert JET_LUT[0].tolist() == [0.0, 0.0, 0.5]
        assert JET_LUT[255].tolist() == [0.5, 0.0, 0.0]


# -- 4 ---------------------------------------------------------------------------


def _pair_count(scores, positive):
    """Exact Mann-Whitney statistic by counting every (positive, negative) pair."""
    p = scores[positive][:, None]
    n = scores[~positive][None, :]
    twice = 2 * int((p > n).sum()) + int((p == n).sum())
    return Fraction(twice, 2 * p.size * n.size)


@pytest.mark.criterion(4)
class TestMetricsOracleSuite:
    def test_auc_duality_and_invariance(self):
        rng = np.random.default_rng(4)
        tied = 0
        for _ in range(1000):
            n = int(rng.integers(2, 201))
            positive = rng.random(n) < rng.uniform(0.05, 0.95)
            positive[0], positive[1] = True, False
            levels = int(rng.integers(2, 30))
            scores = rng.integers(0, levels, n) / levels
            tied += len(np.unique(scores)) < n
            exact = float(_pair_count(scores, positive))
            trap = auc(roc_curve(scores, positive))
            assert abs(trap - exact) <= 1e-12
            assert abs(auc_rank(scores, positive) - exact) <= 1e-12
            warped = np.log1p(scores * 5.0) ** 3 + 2.0  # strictly increasing on [0, 1]
            assert auc(roc_curve(warped, positive)) == trap
            assert auc_rank(warped, positive) == auc_rank(scores, positive)
        assert tied > 900

    def test_five_sample_fixture(self):
        cm = confusion_matrix([0, 0, 1, 2, 3], [0, 1, 1, 2, 3])
        assert accuracy_macro_pr(cm) == (0.8, 0.875, 0.875)


# -- 5 ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy_400(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy400")
    write_toy_tree(root, n_per_class=100, size=32, seed=0)
    return build_dataset(class_dirs_from_root(root), size=32)


@pytest.mark.criterion(5)
class TestToyTraining:
    def test_reaches_95_percent_deterministically(self, toy_400, tmp_path):
        start = time.perf_counter()
        assert len(toy_400) == 400 and toy_400.images.shape[1:] == (3, 32, 32)
        train_set, test_set = split(toy_400, SplitSpec(seed=0))
        cfg = TrainingConfig(learning_rate=1e-4, batch_size=32, max_epochs=200, patience=200, seed=0,
                             checkpoint_path=None)

        def run():
            return train(init_params(ViTConfig.tiny(), seed=0), train_set, test_set, cfg)

        first = run()
        second = run()
        elapsed = time.perf_counter() - start
        best = first.state.best_test_accuracy
        reached = next(r.epoch for r in first.history if r.test_accuracy == best)
        print(f"\n[criterion 5] best test accuracy {best:.4f} at epoch {reached}, two runs in {elapsed:.1f} s")
        assert best >= 0.95
        assert first.history == second.history
        assert all(first.params[k].data.tobytes() == second.params[k].data.tobytes() for k in first.params)
        assert elapsed < 600


# -- 6 ---------------------------------------------------------------------------


@pytest.mark.criterion(6)
class TestEarlyStoppingTrace:
    def test_thousand_sequences(self, tmp_path):
        rng = np.random.default_rng(6)
        cfg_model = ViTConfig(image_size=16, patch_size=16, hidden_dim=4, num_heads=1, num_layers=1, mlp_dim=4)
        train_set = LabeledDataset(rng.uniform(0, 1, (4, 3, 16, 16)).astype(np.float32), [0, 1, 2, 3])
        test_set = train_set.subset([0, 1])
        ckpt = tmp_path / "best.pcvt"
        for trial in range(1000):
            max_epochs = int(rng.integers(1, 13))
            if trial % 2:
                accs = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=max_epochs).tolist()
            else:
                accs = np.round(rng.random(max_epochs), 2).tolist()
            it = iter(accs)
            snaps = {}
            result = train(
                init_params(cfg_model, trial), train_set, test_set,
                TrainingConfig(max_epochs=max_epochs, patience=2, batch_size=4, seed=trial, checkpoint_path=str(ckpt)),
                evaluator=lambda p, ds, b: (0.0, next(it)),
                on_epoch_end=lambda e, p, r: snaps.__setitem__(e, p.arrays()),
            )
            stop, best, best_acc = oracles.reference_early_stopping(accs, 2, max_epochs)
            assert (result.stop_epoch, result.best_epoch) == (stop, best), accs
            assert result.state.best_test_accuracy == best_acc
            chosen = snaps[best if best is not None else stop]
            assert all(result.params[k].data.tobytes() == chosen[k].tobytes() for k in chosen), accs


# -- 7 ---------------------------------------------------------------------------


@pytest.mark.criterion(7)
class TestReproducibility:
    def test_two_train_runs_bit_identical(self, tmp_path):
        data = tmp_path / "data"
        write_toy_tree(data, n_per_class=10, size=32, seed=7)
        args = ["-q", "train", "--data-dir", str(data), "--seed", "11",
                "--set", "image_size=32", "--set", "hidden_dim=8", "--set", "num_heads=2", "--set", "num_layers=2",
                "--set", "mlp_dim=16", "--set", "max_epochs=6", "--set", "patience=6"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        for name in ("history.csv", "best_model.pcvt", "report.json", "roc.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
        assert len((tmp_path / "a" / "history.csv").read_text().splitlines()) == 7


# -- 8 ---------------------------------------------------------------------------


@pytest.mark.criterion(8)
class TestSplitArithmetic:
    def test_15490(self):
        counts = [5000, 5002, 488, 5000]
        labels = np.repeat(np.arange(4), counts)
        assert len(labels) == 15490
        images = np.arange(15490, dtype=np.float32).reshape(-1, 1, 1, 1).repeat(3, axis=1)
        ds = LabeledDataset(images, labels)
        for seed in (0, 1, 2024):
            train_set, test_set = split(ds, SplitSpec(train_fraction=0.8, seed=seed))
            assert (len(train_set), len(test_set)) == (12392, 3098)
            tr = set(train_set.images[:, 0, 0, 0].astype(int).tolist())
            te = set(test_set.images[:, 0, 0, 0].astype(int).tolist())
            assert tr.isdisjoint(te) and tr | te == set(range(15490))
        assert math.floor(0.8 * 15490) == 12392
        train_idx, test_idx = split_indices(labels, SplitSpec())
        assert sorted(train_idx + test_idx) == list(range(15490))


# -- 9 ---------------------------------------------------------------------------


@pytest.mark.criterion(9)
class TestPretrainedParity:
    def test_vit_base_logits(self, tmp_path):
        torch = pytest.importorskip("torch")
        transformers = pytest.importorskip("transformers")
        safetensors_torch = pytest.importorskip("safetensors.torch")
        from pcvit.checkpoint import load
        from pcvit.pseudocolor import preprocess_gray

        # no network: a randomly initialised model with the google/vit-base-patch16-224
        # architecture stands in for the external checkpoint
        torch.manual_seed(0)
        hf_cfg = transformers.ViTConfig(num_labels=4, hidden_act="gelu", layer_norm_eps=1e-12)
        model = transformers.ViTForImageClassification(hf_cfg).eval()
        src = tmp_path / "vit_base.safetensors"
        safetensors_torch.save_file({k: v.contiguous() for k, v in model.state_dict().items()}, str(src))

        out = tmp_path / "vit_base.pcvt"
        assert main(["-q", "import-weights", "--source", str(src), "--out", str(out),
                     "--set", "layer_norm_eps=1e-12"]) == 0
        tensors, meta = load(out)
        assert set(tensors) == set(param_shapes(ViTConfig()))
        assert json.loads(meta["config"])["hidden_dim"] == 768

        gray = (np.add.outer(np.arange(96), 2 * np.arange(96)) % 256).astype(np.uint8)
        x = preprocess_gray(gray)[None]
        with torch.no_grad():
            ref = model(pixel_values=torch.from_numpy(x)).logits.numpy()
        params = vit.load_params(out)
        with T.no_grad():
            ours = forward_logits(x, params).data
        diff = float(np.abs(ours - ref).max())
        print(f"\n[criterion 9] max |logit difference| {diff:.2e}")
        assert diff <= 1e-3
