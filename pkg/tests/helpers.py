"""Shared builders for tests: an oracle checkpoint and small synthetic datasets."""

import math
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from segkit import checkpoint as ckpt
from segkit.data.io import Manifest, load_entry, read_image, write_mask
from segkit.data.preprocess import DataConfig
from segkit.data.synth import synth_dataset
from segkit.nets import ModelSpec, build
from segkit.trainer import TrainConfig


def oracle_config() -> TrainConfig:
    return TrainConfig(
        epochs=1,
        model=ModelSpec(depth=1, base_width=1, batch_norm=False),
        data=DataConfig(clahe=False, augment=False),
    )


def oracle_model(dtype=np.float32):
    """Depth-1 UNet whose weights copy the input image through to a sharp sigmoid.

    The encoder convs are identities, the bottleneck is zeroed, the decoder
    reads only the skip channel, and the head maps 1 -> sigmoid(10) and
    0 -> sigmoid(-10). Fed a binary image, the thresholded output equals it.
    """
    cfg = oracle_config()
    model = build(cfg.model, seed=0, dtype=dtype)
    for name, p in model.params.items():
        p.data[...] = 0
    ident = np.zeros((3, 3))
    ident[1, 1] = 1
    for name in ("enc0.conv1", "enc0.conv2", "dec0.conv2"):
        model.params[f"{name}.weight"].data[0, 0] = ident
    # dec0.conv1 sees [upsampled bottleneck (2 channels), skip (1 channel)]
    model.params["dec0.conv1.weight"].data[0, 2] = ident
    model.params["head.weight"].data[...] = 20.0
    model.params["head.bias"].data[...] = -10.0
    return model.eval(), cfg


def write_oracle_checkpoint(path) -> Path:
    model, cfg = oracle_model()
    meta = {"epoch": 0, "adam_step": 0, "best_val_dice": 1.0, "best_epoch": 0, "config": cfg.to_dict(), "dtype": "<f4"}
    ckpt.save_arrays(path, model.state_arrays(), meta)
    return Path(path)


def mask_image_dataset(out_dir, n=10, size=32, seed=0) -> Manifest:
    """Synthetic manifest whose image files are the ground-truth masks themselves."""
    manifest = synth_dataset(n, out_dir, image_size=size, ratio_range=(0.03, 0.12), seed=seed)
    for entry in manifest.entries:
        sample = load_entry(manifest, entry)
        write_mask(manifest.resolve(entry.image), sample.mask)
        assert np.array_equal(read_image(manifest.resolve(entry.image)) > 0.5, sample.mask)
    return manifest


def small_config(epochs=2, seed=0, **train_kw) -> TrainConfig:
    return TrainConfig(
        epochs=epochs,
        batch_size=4,
        seed=seed,
        model=ModelSpec(depth=2, base_width=2),
        data=DataConfig(clahe_tiles=(2, 2)),
        **train_kw,
    )


def ensemble_property_failures(n_stacks=1000, seed=0):
    """Run the permutation, unanimity and tie-rule properties on random stacks; return failure messages."""
    from segkit.ensemble import average_probability, majority_vote

    rng = np.random.default_rng(seed)
    failures = []
    for k in range(n_stacks):
        m = int(rng.integers(2, 7))
        shape = tuple(int(s) for s in rng.integers(1, 9, size=2))
        stack = rng.uniform(0.001, 0.999, size=(m,) + shape)
        # a share of exact 0.5 values exercises the strict threshold
        stack[rng.uniform(size=stack.shape) < 0.05] = 0.5
        perm = stack[rng.permutation(m)]
        for name, fn in (("majority", majority_vote), ("avgprob", average_probability)):
            if not np.array_equal(fn(list(stack)), fn(list(perm))):
                failures.append(f"stack {k}: {name} not permutation invariant")
            same = np.repeat(stack[:1], m, axis=0)
            if not np.array_equal(fn(list(same)), stack[0] > 0.5):
                failures.append(f"stack {k}: {name} fails unanimity")
        # tie rule: an even split of votes is background
        if m % 2 == 0:
            half = np.concatenate([np.full((m // 2,) + shape, 0.9), np.full((m // 2,) + shape, 0.1)])
            if majority_vote(list(half[rng.permutation(m)])).any():
                failures.append(f"stack {k}: majority tie not background")
        votes = (stack > 0.5).sum(axis=0)
        if not np.array_equal(majority_vote(list(stack)), 2 * votes > m):
            failures.append(f"stack {k}: majority count rule")
    return failures


def tiny_ini(path, manifest=None, epochs=1, loss="switching") -> Path:
    """A config file for a fast CPU run of the command line tools."""
    lines = []
    if manifest is not None:
        lines += ["[experiment]", f"manifest = {manifest}"]
    lines += [
        "[model]", "depth = 2", "base_width = 2",
        "[loss]", f"kind = {loss}",
        "[train]", f"epochs = {epochs}", "batch_size = 4",
        "[data]", "clahe_tiles = 2, 2",
    ]
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def hausdorff_oracle(a, b, spacing=(1.0, 1.0)):
    row_mm, col_mm = spacing

    def d(p, q):
        dx = p[0] * col_mm - q[0] * col_mm
        dy = p[1] * row_mm - q[1] * row_mm
        return math.sqrt(dx * dx + dy * dy)

    directed = lambda s, t: max(min(d(p, q) for q in t) for p in s)
    return max(directed(a, b), directed(b, a))


def dice_oracle(p, t):
    ps = {tuple(i) for i in np.argwhere(p)}
    ts = {tuple(i) for i in np.argwhere(t)}
    if not ps and not ts:
        return 1.0
    return 2 * len(ps & ts) / (len(ps) + len(ts))


ACCEPTANCE_LINES = []


@contextmanager
def criterion(number: int, title: str):
    """Record one PASS/FAIL line for an acceptance criterion.

    The body fills ``detail`` (a dict) and fails through assertions; the
    line is printed immediately and repeated in the pytest summary.
    """
    detail = {}
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield detail
        status = "PASS"
    finally:
        extra = ", ".join(f"{k}={v}" for k, v in detail.items())
        line = f"criterion {number:2d} {status}: {title} [{extra}; {time.perf_counter() - start:.1f} s]"
        ACCEPTANCE_LINES.append(line)
        print(line, file=sys.__stdout__, flush=True)
