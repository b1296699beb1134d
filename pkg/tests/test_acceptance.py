"""Acceptance criteria, one test each.

Every check records a one-line PASS/FAIL verdict; the lines are printed in the pytest
terminal summary, or directly when this file is run as a script.
"""

import math
import sys
import time
from decimal import Decimal, getcontext
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from conftest import fd_check  # noqa: E402
from test_lut import oracle_pixel  # noqa: E402
from test_metrics import lab_scalar, mse_loop, ssim_loop  # noqa: E402

from cliplut import checkpoint  # noqa: E402
from cliplut.config import RunConfig  # noqa: E402
from cliplut.encoders import EMBED_DIM, mock_encoder  # noqa: E402
from cliplut.losses import perceptual_from_embeddings, perceptual_prompt_loss, ssim_loss, total_loss  # noqa: E402
from cliplut.lut import Lut3D, apply_lattice, apply_lut, blend_luts, identity_lut, read_cube, write_cube  # noqa: E402
from cliplut.metrics import delta_e, lab_distance, psnr, ssim  # noqa: E402
from cliplut.predictor import Enhancer, export_lut, predict_weights, sca, simple_gate  # noqa: E402
from cliplut.prompts import (PromptPair, PromptTrainConfig, classify_accuracy, prompt_loss, LabeledImage,  # noqa: E402
                             random_prompts, score, score_from_embeddings, train_prompts)
from cliplut.synthetic import brightness_pairs, lut_task  # noqa: E402
from cliplut.training import evaluate_psnr, save_enhancer, train_enhancer  # noqa: E402

VERDICTS: list[str] = []


def verdict(number, title, ok, detail, elapsed, budget):
    in_time = elapsed < budget
    status = "PASS" if ok and in_time else "FAIL"
    line = f"[{status}] criterion {number:2d} {title}: {detail}; {elapsed:.1f}s (budget {budget:g}s)"
    VERDICTS.append(line)
    return ok and in_time, line


def logistic(x: str) -> float:
    getcontext().prec = 50
    return float(1 / (1 + (-Decimal(x)).exp()))


# ----------------------------------------------------------------- 1


def criterion_1():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for dim in (2, 17, 33):
        lut = identity_lut(dim)
        imgs = torch.from_numpy(rng.uniform(0, 1, (50, 64, 64, 3)))
        worst = max(worst, float((apply_lut(lut, imgs) - imgs).abs().max()))
    nodes_exact = True
    for dim in (2, 17, 33):
        lut = Lut3D(torch.from_numpy(rng.uniform(0, 1, (dim, dim, dim, 3))))
        idx = rng.integers(0, dim, (500, 3))
        out = apply_lut(lut, torch.from_numpy(idx / (dim - 1)), clamp=False)
        nodes_exact &= torch.equal(out, lut.entries[idx[:, 0], idx[:, 1], idx[:, 2]])
    ok = worst <= 1e-6 and nodes_exact
    return verdict(1, "LUT identity and node exactness", ok,
                   f"max identity error {worst:.2e} (tol 1e-6), nodes exact={nodes_exact}",
                   time.perf_counter() - t0, 10)


# ----------------------------------------------------------------- 2


def criterion_2():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(2, 10))
        table = rng.uniform(-0.2, 1.2, (dim, dim, dim, 3))
        img = rng.uniform(-0.05, 1.05, (6, 6, 3))
        out = apply_lut(Lut3D(torch.from_numpy(table)), torch.from_numpy(img), clamp=False).numpy()
        for y in range(6):
            for x in range(6):
                worst = max(worst, float(np.abs(out[y, x] - oracle_pixel(table, img[y, x])).max()))
    return verdict(2, "interpolation oracle", worst <= 1e-10,
                   f"max deviation from 8-corner oracle {worst:.2e} (tol 1e-10)", time.perf_counter() - t0, 30)


# ----------------------------------------------------------------- 3


def criterion_3():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        dim = int(rng.integers(2, 12))
        luts = [Lut3D(torch.from_numpy(rng.uniform(-0.5, 1.5, (dim, dim, dim, 3)))) for _ in range(3)]
        w = rng.normal(0, 1, 3)
        img = torch.from_numpy(rng.uniform(0, 1, (16, 16, 3)))
        blended = apply_lut(blend_luts(luts, w.tolist()), img, clamp=False)
        summed = sum(float(wk) * apply_lut(l, img, clamp=False) for wk, l in zip(w, luts))
        worst = max(worst, float((blended - summed).abs().max()))
    return verdict(3, "blend linearity", worst <= 1e-10, f"max deviation {worst:.2e} (tol 1e-10)",
                   time.perf_counter() - t0, 10)


# ----------------------------------------------------------------- 4


def criterion_4():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    errors = {}
    enc = mock_encoder(0)

    img = torch.from_numpy(rng.uniform(0, 1, (4, 4, 3)))
    tgt = torch.from_numpy(rng.uniform(0, 1, (4, 4, 3)))
    errors["apply_lut/entries"] = fd_check(
        lambda e: ((apply_lattice(e, img, clamp=False) - tgt) ** 2).sum(),
        torch.from_numpy(rng.uniform(0, 1, (3, 3, 3, 3))))

    luts = [Lut3D(torch.from_numpy(rng.uniform(0, 1, (4, 4, 4, 3)))) for _ in range(3)]
    errors["blend/weights"] = fd_check(
        lambda w: ((apply_lut(blend_luts(luts, w), img, clamp=False) - tgt) ** 2).mean(),
        torch.tensor([0.2, 0.5, 0.3], dtype=torch.float64))

    x = torch.from_numpy(rng.normal(size=(1, 6, 3, 3)))
    v = torch.from_numpy(rng.normal(size=(1, 3, 3, 3)))
    errors["simple_gate"] = fd_check(lambda t: (simple_gate(t) * v).sum(), x)
    w = torch.from_numpy(rng.normal(size=(6, 6)))
    errors["sca/input"] = fd_check(lambda t: (sca(t, w) * x).sum(), x)
    errors["sca/weight"] = fd_check(lambda m: (sca(x, m) * x).sum(), w)

    torch.manual_seed(0)
    model = Enhancer(lut_dim=5).double()
    with torch.no_grad():
        model.predictor.head.weight.normal_(0, 0.5)
    im32 = torch.from_numpy(rng.uniform(0, 1, (32, 32, 3)))
    stem = model.predictor.stem.weight

    def w1_of_stem(value):
        saved = stem.detach().clone()
        with torch.no_grad():
            stem.copy_(value)
        try:
            return predict_weights(im32, model)[0]
        finally:
            with torch.no_grad():
                stem.copy_(saved)

    model.zero_grad()
    predict_weights(im32, model)[0].backward()
    from conftest import central_fd, rel_error
    idx = rng.choice(stem.numel(), 40, replace=False).tolist()
    num = central_fd(lambda v: float(w1_of_stem(v).detach()), stem.detach(), indices=idx).reshape(-1)
    sel = torch.tensor(idx)
    errors["predict_weights/stem"] = rel_error(stem.grad.reshape(-1)[sel], num[sel])
    errors["predict_weights/image"] = fd_check(lambda t: predict_weights(t, model)[0], im32,
                                               indices=rng.choice(im32.numel(), 40, replace=False).tolist())

    a16, b16 = torch.from_numpy(rng.uniform(0, 1, (2, 16, 16, 3)))
    idx16 = rng.choice(a16.numel(), 60, replace=False).tolist()
    errors["ssim_loss"] = fd_check(lambda t: ssim_loss(t, b16), a16, indices=idx16)

    p = random_prompts(4, seed=1, dtype=torch.float64)
    images = torch.from_numpy(rng.uniform(0, 1, (4, 16, 16, 3)))
    batch = [LabeledImage(im, i % 2) for i, im in enumerate(images)]
    tidx = rng.choice(p.original.numel(), 40, replace=False).tolist()
    errors["score/tokens"] = fd_check(lambda t: score(images, PromptPair(t, p.enhanced), enc, 10.0).sum(),
                                      p.original, indices=tidx)
    errors["prompt_loss/tokens"] = fd_check(lambda t: prompt_loss(batch, PromptPair(p.original, t), enc, 10.0),
                                            p.enhanced, indices=tidx)
    errors["total_loss/pixels"] = fd_check(lambda t: total_loss(t, b16, p, enc).total, a16, indices=idx16)

    worst = max(errors, key=errors.get)
    ok = all(e <= 1e-4 for e in errors.values())
    return verdict(4, "gradient suite", ok,
                   f"{len(errors)} checks, worst {worst} rel err {errors[worst]:.2e} (tol 1e-4)",
                   time.perf_counter() - t0, 120)


# ----------------------------------------------------------------- 5


def criterion_5():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    enc = mock_encoder(0)
    p = random_prompts(16, seed=2, dtype=torch.float64)
    imgs = torch.from_numpy(rng.uniform(0, 1, (20, 16, 16, 3)))
    comp = max(abs(float(perceptual_prompt_loss(im, p, enc) + score(im, p, enc)) - 1) for im in imgs)
    e = torch.eye(3, EMBED_DIM, dtype=torch.float64)
    t_o = 0.2 * e[0] + math.sqrt(1 - 0.04) * e[1]
    t_e = 0.8 * e[0] + 0.6 * e[2]
    value = float(score_from_embeddings(e[0], t_o, t_e))
    gap = abs(value - logistic("0.6"))
    also = abs(float(perceptual_from_embeddings(e[0], t_o, t_e)) + value - 1)
    ok = comp <= 1e-12 and also <= 1e-12 and gap <= 1e-5 and abs(value - 0.64566) <= 1e-5
    return verdict(5, "score/perceptual identities", ok,
                   f"|score+perceptual-1| {max(comp, also):.1e} (tol 1e-12), score {value:.6f} vs logistic "
                   f"{logistic('0.6'):.6f}", time.perf_counter() - t0, 1)


# ----------------------------------------------------------------- 6


def criterion_6():
    from sklearn.linear_model import LogisticRegression

    t0 = time.perf_counter()
    enc = mock_encoder(0)
    train_o, train_e = brightness_pairs(200, 64, seed=0)
    test_o, test_e = brightness_pairs(50, 64, seed=1)
    prompts, hist = train_prompts(train_o, train_e, enc, PromptTrainConfig(epochs=100, seed=0))
    test_imgs = torch.cat([test_o, test_e])
    test_lab = torch.cat([torch.zeros(50), torch.ones(50)])
    acc = classify_accuracy(test_imgs, test_lab, prompts, enc)

    with torch.no_grad():
        x = torch.cat([enc.encode_image(train_o), enc.encode_image(train_e)]).numpy()
        xt = enc.encode_image(test_imgs).numpy()
    y = np.r_[np.zeros(200), np.ones(200)]
    oracle = LogisticRegression(max_iter=5000).fit(x, y).score(xt, test_lab.numpy())
    ok = acc >= 0.95 and oracle >= 0.95
    return verdict(6, "prompt learning", ok,
                   f"held-out accuracy {acc:.3f}, logistic oracle {oracle:.3f} (both need >= 0.95)",
                   time.perf_counter() - t0, 120)


# ----------------------------------------------------------------- 7


def overfit_config(mode="none", seed=0):
    return RunConfig(seed=seed, prompt_mode=mode, enhancer_epochs=2000, max_steps=2000, image_batch=8,
                     lut_dim=33)


def criterion_7():
    t0 = time.perf_counter()
    inputs, targets, oracle = lut_task(8, 64, seed=0)
    sanity = Enhancer(lut_dim=33)
    with torch.no_grad():
        sanity.luts.copy_(oracle.entries.to(torch.float32).expand(3, -1, -1, -1, -1))
    sanity_psnr = evaluate_psnr(sanity, inputs, targets)
    _, hist = train_enhancer(inputs, targets, overfit_config(), stop_at_psnr=35.0)
    ok = hist.final_psnr >= 35.0 and sanity_psnr > 60.0
    return verdict(7, "end-to-end overfit", ok,
                   f"train PSNR {hist.initial_psnr:.2f} -> {hist.final_psnr:.2f} dB after {hist.steps} steps "
                   f"(need >= 35 within 2000), oracle-LUT PSNR {sanity_psnr:.1f} dB (need > 60)",
                   time.perf_counter() - t0, 600)


# ----------------------------------------------------------------- 8


def criterion_8():
    t0 = time.perf_counter()
    inputs, targets, _ = lut_task(8, 64, seed=0)
    enc = mock_encoder(0)
    learned, _ = train_prompts(inputs, targets, enc, PromptTrainConfig(epochs=100, seed=0))
    final = {}
    for mode in ("none", "learned", "random"):
        _, hist = train_enhancer(inputs, targets, overfit_config(mode),
                                 prompts=learned if mode == "learned" else None, enc=enc)
        final[mode] = hist.final_psnr
    learned_ok = final["learned"] >= final["none"] - 0.5
    random_ok = final["random"] <= final["none"]
    detail = (f"final PSNR none {final['none']:.2f}, learned {final['learned']:.2f}, random {final['random']:.2f} dB; "
              f"learned >= none-0.5: {learned_ok}, random <= none: {random_ok}")
    return verdict(8, "ablation trend", learned_ok and random_ok, detail, time.perf_counter() - t0, 1800)


# ----------------------------------------------------------------- 9


def criterion_9():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    worst = {"psnr": 0.0, "ssim": 0.0, "delta_e": 0.0}
    for _ in range(5):
        a, b = rng.uniform(0, 1, (2, 16, 16, 3))
        worst["psnr"] = max(worst["psnr"], abs(psnr(a, b) - 10 * math.log10(1 / mse_loop(a, b))))
        worst["ssim"] = max(worst["ssim"], abs(ssim(a, b) - ssim_loop(a, b)))
        ref = np.mean([math.dist(lab_scalar(p), lab_scalar(q)) for p, q in zip(a.reshape(-1, 3), b.reshape(-1, 3))])
        worst["delta_e"] = max(worst["delta_e"], abs(delta_e(a, b) - ref))
    same = delta_e(a, a)
    d345 = float(lab_distance(torch.tensor([50.0, 0.0, 0.0], dtype=torch.float64),
                              torch.tensor([50.0, 3.0, 4.0], dtype=torch.float64)))
    ok = all(v <= 1e-6 for v in worst.values()) and same == 0.0 and d345 == 5.0
    return verdict(9, "metric oracles", ok,
                   "max deviations " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
                   + f" (tol 1e-6); dE(x,x)={same}; dE 3-4-5 = {d345}", time.perf_counter() - t0, 10)


# ----------------------------------------------------------------- 10


def criterion_10(tmp: Path):
    from cliplut.cli import enhance_image

    t0 = time.perf_counter()
    inputs, targets, _ = lut_task(4, 48, seed=3)
    cfg = RunConfig(seed=11, prompt_mode="none", enhancer_epochs=3, image_batch=2, lut_dim=9, image_size=48)
    blobs, outputs = [], []
    for run in range(2):
        model, _ = train_enhancer(inputs, targets, cfg)
        save_enhancer(tmp / f"m{run}.ckpt", model, cfg, epoch=3)
        blobs.append((tmp / f"m{run}.ckpt").read_bytes())
        outputs.append(enhance_image(model, inputs[0], cfg.image_size)[0])
    ckpt_same = blobs[0] == blobs[1]
    out_same = torch.equal(outputs[0], outputs[1])

    tensors, meta = checkpoint.loads(blobs[0])
    ckpt_round = checkpoint.dumps(tensors, meta) == blobs[0]

    lut = export_lut(inputs[0], model)
    write_cube(lut, tmp / "e.cube")
    back = read_cube(tmp / "e.cube")
    cube_round = torch.equal(back.entries, lut.entries.double())
    gap = float((apply_lut(back, inputs[0].double()) - outputs[1].double()).abs().max())

    ok = ckpt_same and out_same and ckpt_round and cube_round and gap <= 1e-6
    return verdict(10, "determinism and serialization", ok,
                   f"checkpoints identical={ckpt_same}, outputs identical={out_same}, checkpoint round trip="
                   f"{ckpt_round}, cube round trip={cube_round}, export vs in-process {gap:.1e} (tol 1e-6)",
                   time.perf_counter() - t0, 60)


# ----------------------------------------------------------------- pytest wrappers


def check(result):
    ok, line = result
    assert ok, line


def test_criterion_01_lut_identity():
    check(criterion_1())


def test_criterion_02_interpolation_oracle():
    check(criterion_2())


def test_criterion_03_blend_linearity():
    check(criterion_3())


def test_criterion_04_gradients():
    check(criterion_4())


def test_criterion_05_score_identities():
    check(criterion_5())


def test_criterion_06_prompt_learning():
    check(criterion_6())


@pytest.mark.slow
def test_criterion_07_overfit():
    check(criterion_7())


@pytest.mark.slow
def test_criterion_08_ablation_trend():
    check(criterion_8())


def test_criterion_09_metric_oracles():
    check(criterion_9())


def test_criterion_10_determinism(tmp_path):
    check(criterion_10(tmp_path))


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        for fn in (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
                   criterion_7, criterion_8, criterion_9, lambda: criterion_10(Path(d))):
            print(fn()[1], flush=True)
