"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line."""
import csv
import time

import numpy as np
import pytest

from conftest import away_from_zero, distinct_values, grad_check, naive_glcm
from domassim import attacks as A
from domassim import data as D
from domassim import tensor as T
from domassim import texture as tx
from domassim import train as TR
from domassim.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from domassim.cli import main
from domassim.evaluation import EPSILON_GRID, read_report_csv
from domassim.models import ModelStack
from domassim.tensor import Tensor, tensor

N_GRAD = 100
# float32 forward passes: a 1e-2 probe keeps round-off well below the op tolerance,
# and sampled inputs stay >= 0.05 away from every kink
FD_STEP = 1e-2
# the soft loss has |a - b| and clip kinks at data-dependent points, so probe it finely
FD_STEP_SOFT = 1e-3


# 1 ------------------------------------------------------------------------

def test_ac1_glcm_oracle(criterion):
    with criterion(1, "GLCM equals naive pair enumeration, 1000 images x G{2,4,8,16} x 8 offsets") as note:
        rng = np.random.default_rng(1)
        offsets = tx.orientation_offsets(3)
        elapsed = 0.0
        checked = 0
        for _ in range(1000):
            h, w = rng.integers(4, 17, 2)
            img = rng.random((h, w))
            for G in (2, 4, 8, 16):
                lv = tx.quantize(img, G)
                rows = lv.tolist()
                for off in offsets:
                    t0 = time.perf_counter()
                    got = tx.glcm(lv, off, G).counts
                    elapsed += time.perf_counter() - t0
                    assert np.array_equal(got, naive_glcm(rows, off.dx, off.dy, G)), (h, w, G, off)
                    checked += 1
        assert checked == 1000 * 4 * 8
        assert elapsed < 60.0
        note["note"] = f"{checked} matrices, optimized path {elapsed:.2f}s"


# 2 ------------------------------------------------------------------------

def test_ac2_sot_hand_values(criterion):
    with criterion(2, "texture features: checkerboard (0.5,1,0.25,-1,1), constant image"):
        checker = np.indices((6, 6)).sum(axis=0) % 2
        f = tx.sot_features(tx.glcm_normalize(tx.glcm(checker, tx.GlcmOffset(1, 0), 2)))
        assert f.tolist() == [0.5, 1.0, 0.25, -1.0, 1.0]
        P = np.array([[0.0, 0.5], [0.5, 0.0]])
        assert tx.sot_features(P).tolist() == [0.5, 1.0, 0.25, -1.0, 1.0]
        const = np.full((1, 1, 16, 16), 0.4)
        M = tx.sot_matrix(const, 3, 16)
        cols = {name: M[0, i * 8:(i + 1) * 8] for i, name in enumerate(tx.FEATURES)}
        assert np.all(cols["contrast"] == 0) and np.all(cols["dissimilarity"] == 0)
        assert np.all(cols["homogeneity"] == 1)


# 3 ------------------------------------------------------------------------

def _bn(x, g, b):
    return T.batch_norm2d(x, g, b, np.zeros(g.shape[0], np.float32), np.ones(g.shape[0], np.float32), training=True)


def _ops():
    """(name, fn, input sampler) for every differentiable primitive."""
    def conv(r):
        c, s, p = r.integers(1, 3), int(r.integers(1, 3)), int(r.integers(0, 2))
        return [r.standard_normal((2, c, 5, 5)), r.standard_normal((2, c, 3, 3)), r.standard_normal(2)], \
            lambda x, w, b: T.conv2d(x, w, b, s, p)

    def tconv(r):
        s, p = int(r.integers(1, 3)), int(r.integers(0, 2))
        return [r.standard_normal((2, 2, 3, 3)), r.standard_normal((2, 2, 2, 3)), r.standard_normal(2)], \
            lambda x, w, b: T.conv_transpose2d(x, w, b, s, p)

    def pool(r):
        return [distinct_values(r, (2, 2, 4, 4), 0.05)], lambda x: T.max_pool2d(x, 2)[0]

    def bn(r):
        return [r.standard_normal((3, 2, 3, 3)), r.uniform(0.5, 1.5, 2), r.standard_normal(2)], _bn

    def dense(r):
        return [r.standard_normal((3, 4)), r.standard_normal((2, 4)), r.standard_normal(2)], T.dense

    def relu(r):
        return [away_from_zero(r, (3, 4))], T.relu

    def dropout(r):
        seed = int(r.integers(1 << 30))
        return [r.standard_normal((3, 6))], lambda x: T.dropout(x, 0.4, True, seed)

    def ce(r):
        y = r.integers(0, 3, 4)
        return [r.standard_normal((4, 3)) * 2], lambda z: T.softmax_cross_entropy(z, y)

    def elementwise(fn, lo=-2.0, hi=2.0):
        return lambda r: ([r.uniform(lo, hi, (3, 4))], fn)

    def binary(fn):
        return lambda r: ([r.standard_normal((3, 4)), r.uniform(0.5, 2.0, (4,))], fn)

    def reduce_max(r):
        return [distinct_values(r, (3, 4), 0.05)], lambda x: x.max(axis=1)

    def where(r):
        cond = r.random((3, 4)) > 0.5
        return [r.standard_normal((3, 4)), r.standard_normal((3, 4))], lambda a, b: T.where(cond, a, b)

    def clip(r):
        v = r.uniform(-2, 2, (3, 4))
        v = np.where(np.abs(np.abs(v) - 1) < 0.05, 0.0, v)
        return [v], lambda x: x.clip(-1.0, 1.0)

    return [
        ("conv2d", conv), ("conv_transpose2d", tconv), ("max_pool2d", pool), ("batch_norm2d", bn),
        ("dense", dense), ("relu", relu), ("dropout", dropout), ("softmax_cross_entropy", ce),
        ("add", binary(lambda a, b: a + b)), ("sub", binary(lambda a, b: a - b)),
        ("mul", binary(lambda a, b: a * b)), ("div", binary(lambda a, b: a / b)),
        ("matmul", lambda r: ([r.standard_normal((3, 4)), r.standard_normal((4, 2))], lambda a, b: a @ b)),
        ("neg", elementwise(lambda x: -x)), ("pow", elementwise(lambda x: x ** 3)),
        ("exp", elementwise(lambda x: x.exp())), ("log", elementwise(lambda x: x.log(), 0.5, 3.0)),
        ("sqrt", elementwise(lambda x: x.sqrt(), 0.5, 3.0)), ("abs", lambda r: ([away_from_zero(r, (3, 4))], abs)),
        ("sigmoid", elementwise(lambda x: x.sigmoid())), ("clip", clip),
        ("sum", elementwise(lambda x: x.sum(axis=0))), ("mean", elementwise(lambda x: x.mean(axis=1, keepdims=True))),
        ("max", reduce_max), ("reshape_transpose", elementwise(lambda x: x.reshape(2, 6).T)),
        ("getitem", elementwise(lambda x: x[1:, ::2])), ("where", where),
        ("stack", binary(lambda a, b: T.stack([a, a * b], axis=0))),
        ("concatenate", binary(lambda a, b: T.concatenate([a, a * b], axis=1))),
    ]


def _soft_instance(rng, margin=1e-3):
    """Random soft-loss inputs whose feature differences all clear the |a - b| kink."""
    while True:
        G, d = int(rng.choice([4, 8])), int(rng.integers(1, 4))
        orig = rng.random((1, 1, 8, 8))
        col = rng.uniform(0.05, 0.95, (1, 3, 8, 8))
        a = tx._soft_sot(tx.soft_grayscale(Tensor(col)), d, G, 0.5).data
        b = tx._soft_sot(Tensor(orig[:, 0]), d, G, 0.5).data
        if np.abs(a - b).min() >= margin:
            return G, d, orig, col


def test_ac3_gradient_checks(criterion):
    with criterion(3, f"finite-difference gradients, {N_GRAD} instances per op and soft GLCM loss") as note:
        start = time.perf_counter()
        rng = np.random.default_rng(3)
        worst = {}
        for name, sampler in _ops():
            for _ in range(N_GRAD):
                inputs, fn = sampler(rng)
                worst[name] = max(worst.get(name, 0.0), grad_check(fn, inputs, rng, h=FD_STEP))
        bad = {k: v for k, v in worst.items() if v >= 1e-3}
        assert not bad, bad
        soft_worst = 0.0
        for _ in range(N_GRAD):
            G, d, orig, col = _soft_instance(rng)
            err = grad_check(lambda c: tx.soft_glcm_loss(c, orig, distance=d, levels=G, tau=0.5), [col], rng,
                             h=FD_STEP_SOFT)
            soft_worst = max(soft_worst, err)
        assert soft_worst < 1e-2
        assert time.perf_counter() - start < 300
        note["note"] = f"{len(worst)} ops, worst op err {max(worst.values()):.1e}, soft GLCM {soft_worst:.1e}"


# 4 ------------------------------------------------------------------------

def test_ac4_attack_collapse_and_invariants(criterion):
    with criterion(4, "attack collapses exact; eps-ball and [0,1] on every iterate, eps 1..8/255"):
        rng = np.random.default_rng(4)
        model = ModelStack("tc", (16, 16), 2, width=4, hidden=16, seed=11)
        x = rng.random((4, 1, 16, 16)).astype(np.float32)
        x[:, :, 0, 0], x[:, :, 0, 1] = 0.0, 1.0
        y = np.array([0, 1, 0, 1])

        def same(a, b):
            return len(a) == len(b) and all(u.tobytes() == v.tobytes() for u, v in zip(a, b))

        for k in EPSILON_GRID:
            eps = k / 255
            f, b1, m1, pg, bi = [], [], [], [], []
            A.fgsm(model, x, y, eps, trace=f)
            A.bim(model, x, y, eps, alpha=eps, steps=1, trace=b1)
            A.mifgsm(model, x, y, eps, steps=1, trace=m1)
            A.pgd(model, x, y, eps, steps=10, random_start=False, trace=pg)
            A.bim(model, x, y, eps, alpha=2.5 * eps / 10, steps=10, trace=bi)
            assert same(f, b1) and same(f, m1) and same(pg, bi)
            for kind in A.ATTACKS:
                trace = []
                A.run_attack(model, x, y, A.AttackConfig(kind, eps, steps=10, seed=k), trace=trace)
                for it in trace:
                    assert it.min() >= 0.0 and it.max() <= 1.0
                    assert np.abs(it.astype(np.float64) - x).max() <= eps + 1e-6, (kind, k)


# 5 ------------------------------------------------------------------------

def test_ac5_soft_to_hard(criterion):
    with criterion(5, "|soft - hard| GLCM loss < 1e-3 at tau=1e-3 on bin-centred images") as note:
        rng = np.random.default_rng(5)
        worst = 0.0
        for G in (2, 4, 8, 16):
            for _ in range(3):
                a = (rng.integers(0, G, (4, 1, 16, 16)) / (G - 1)).astype(np.float32)
                b = (rng.integers(0, G, (4, 1, 16, 16)) / (G - 1)).astype(np.float32)
                rgb = np.repeat(a, 3, axis=1)
                soft = tx.soft_glcm_loss(tensor(rgb), b, levels=G, tau=1e-3).item()
                worst = max(worst, abs(soft - tx.glcm_loss(rgb, b, levels=G)))
        assert worst < 1e-3
        note["note"] = f"max gap {worst:.1e}"


# 6 ------------------------------------------------------------------------

def test_ac6_training_smoke_and_early_stopping(criterion, monkeypatch):
    with criterion(6, "base >= 95% train accuracy within 50 epochs; patience=5 plateau stop") as note:
        start = time.perf_counter()
        tr, va = D.split(D.synth_textures(200, 32, seed=0), 0.8, seed=0)
        stack = ModelStack("base", (32, 32), 2, seed=0)
        x_tr, y_tr = tr.batch(), tr.labels
        seen = []

        def on_epoch(rec):
            seen.append(TR.accuracy(stack, x_tr, y_tr))

        TR.train(stack, tr, va, TR.TrainConfig(epochs=50, patience=50, variant="base"), on_epoch=on_epoch)
        first = next((i + 1 for i, a in enumerate(seen) if a >= 0.95), None)
        assert first is not None, max(seen)
        assert time.perf_counter() - start < 600

        script = iter([0.5, 0.6, 0.7, 0.7, 0.69, 0.7, 0.65, 0.7, 0.7, 0.7, 0.7, 0.7])
        monkeypatch.setattr(TR, "accuracy", lambda *a, **k: next(script))
        small_tr, small_va = D.split(D.synth_textures(8, 16, seed=1), 0.75, seed=1)
        plateau = ModelStack("base", (16, 16), 2, width=4, hidden=16, seed=1)
        snaps = {}
        plateau, hist = TR.train(plateau, small_tr, small_va,
                                 TR.TrainConfig(epochs=12, patience=5, batch_size=4, lr=1e-3, input_size=16),
                                 on_epoch=lambda r: snaps.__setitem__(r.epoch, plateau.state_dict()))
        assert hist.best_epoch == 3 and len(hist.records) == 3 + 5 and hist.stop_reason == "early_stopping"
        restored = plateau.state_dict()
        assert all(snaps[3][k].tobytes() == v.tobytes() for k, v in restored.items())
        note["note"] = f"95% reached at epoch {first}; plateau stopped at epoch {len(hist.records)}"


# 7 ------------------------------------------------------------------------

def test_ac7_combined_loss_arithmetic(criterion):
    with criterion(7, "logged combined loss = 0.98*CE + 0.02*GLCM within 1e-6 on every batch") as note:
        tr, va = D.split(D.synth_textures(24, 16, seed=7), 0.75, seed=7)
        stack = ModelStack("tc_glcm", (16, 16), 2, width=4, hidden=16, seed=7)
        cfg = TR.TrainConfig(epochs=3, patience=3, batch_size=8, input_size=16, variant="tc_glcm")
        assert cfg.alpha == 0.98
        _, hist = TR.train(stack, tr, va, cfg)
        gaps = [abs(b.combined - (0.98 * b.ce + 0.02 * b.glcm)) for b in hist.batches]
        assert len(gaps) == 3 * 5 and max(gaps) <= 1e-6
        note["note"] = f"{len(gaps)} batches, max gap {max(gaps):.1e}"


# 8 ------------------------------------------------------------------------

def _pipeline(tmp, cfg_text, epochs, steps=10):
    cfg = tmp / "run.cfg"
    cfg.write_text(cfg_text)
    ckpts = []
    for v in ("base", "tc", "tc_glcm"):
        ck = tmp / f"{v}.ckpt"
        assert main(["train", "--synth", "--config", str(cfg), "--variant", v, "--epochs", str(epochs),
                     "--out", str(ck)]) == 0
        ckpts += ["--ckpt", str(ck)]
    out = tmp / "report.csv"
    assert main(["attack-eval", "--synth", "--config", str(cfg), *ckpts, "--steps", str(steps),
                 "--out", str(out)]) == 0
    return out


@pytest.mark.slow
def test_ac8_pipeline_and_monotonicity(criterion, tmp_path):
    with criterion(8, "synth -> train x3 -> attack-eval: row counts, iterative attacks monotone in eps") as note:
        out = _pipeline(tmp_path, "n_per_class = 200\ninput_size = 32\nlr = 0.001\nseed = 0\n", epochs=15)
        rows = read_report_csv(out)
        worst = 0.0
        for v in ("base", "tc", "tc_glcm"):
            vr = [r for r in rows if r.variant == v]
            assert len(vr) == 1 + len(A.ATTACKS) * len(EPSILON_GRID)
            assert sum(r.attack == "clean" for r in vr) == 1
            for kind in ("bim", "pgd", "mifgsm"):
                acc = [r.accuracy for r in sorted((r for r in vr if r.attack == kind), key=lambda r: r.epsilon_k)]
                assert [r.epsilon_k for r in vr if r.attack == kind] == list(EPSILON_GRID)
                rises = [b - a for a, b in zip(acc, acc[1:])]
                worst = max(worst, max(rises))
                assert max(rises) <= 0.02 + 1e-12, (v, kind, acc)
        summary = {v: [r.accuracy for r in rows if r.variant == v and r.attack == "clean"][0]
                   for v in ("base", "tc", "tc_glcm")}
        note["note"] = f"clean acc {summary}, largest rise {worst * 100:.1f}pp"


# 9 ------------------------------------------------------------------------

def test_ac9_checkpoint_round_trip(criterion, tmp_path):
    with criterion(9, "checkpoint save/load forward bit-identical; corrupt files rejected"):
        rng = np.random.default_rng(9)
        for v in ("base", "tc", "tc_glcm"):
            s = ModelStack(v, (16, 16), 3, width=4, hidden=16, seed=9)
            s(Tensor(rng.random((4, 1, 16, 16))))  # move BN running stats
            s.eval()
            path = tmp_path / f"{v}.ckpt"
            save_checkpoint(s, path)
            back = load_checkpoint(path)
            x = Tensor(rng.random((5, 1, 16, 16)))
            assert back(x)[0].data.tobytes() == s(x)[0].data.tobytes()
            assert back(x)[1].data.tobytes() == s(x)[1].data.tobytes()
            raw = path.read_bytes()
            for i, cut in enumerate((0, 7, len(raw) // 2, len(raw) - 1)):
                bad = tmp_path / f"bad{i}.ckpt"
                bad.write_bytes(raw[:cut])
                with pytest.raises(CheckpointError):
                    load_checkpoint(bad)
            flipped = bytearray(raw)
            flipped[len(raw) - 4] ^= 0xFF
            bad = tmp_path / "flip.ckpt"
            bad.write_bytes(bytes(flipped))
            with pytest.raises(CheckpointError):
                load_checkpoint(bad)
            assert path.read_bytes() == raw


# 10 -----------------------------------------------------------------------

@pytest.mark.slow
def test_ac10_determinism(criterion, tmp_path):
    with criterion(10, "two seeded end-to-end runs give byte-identical report CSVs") as note:
        text = "n_per_class = 30\ninput_size = 16\nwidth = 4\nhidden = 16\nbatch_size = 16\nlr = 0.001\nseed = 3\n"
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        a = _pipeline(tmp_path / "a", text, epochs=3).read_bytes()
        b = _pipeline(tmp_path / "b", text, epochs=3).read_bytes()
        assert a == b
        n_rows = len(list(csv.reader(a.decode().splitlines()))) - 1
        assert n_rows == 3 * (1 + len(A.ATTACKS) * len(EPSILON_GRID))
        note["note"] = f"{len(a)} bytes, {n_rows} rows"
