#!/usr/bin/env python3
"""Regenerates the checked-in fixtures under testdata/.

Requires Pillow (libjpeg-turbo), scikit-image (sample photographs) and, for
the MS-SSIM reference values, tensorflow. Output is deterministic for a fixed
library version; the files are committed so the Rust test suites never need
Python.

    python3 scripts/make_testdata.py [--only progressive,gray,baseline,engineered,mssim]
"""

import argparse
import io
import os
import shutil

import numpy as np
from PIL import Image
import skimage.data as sk

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "testdata")

COLOR_SOURCES = [
    "astronaut",
    "coffee",
    "chelsea",
    "rocket",
    "hubble_deep_field",
    "immunohistochemistry",
    "retina",
    "colorwheel",
]
GRAY_SOURCES = ["camera", "moon", "coins", "grass", "gravel", "brick"]

EXIF_STUB = b"Exif\x00\x00MM\x00\x2a\x00\x00\x00\x08\x00\x00"


def reset(sub):
    path = os.path.join(ROOT, sub)
    shutil.rmtree(path, ignore_errors=True)
    os.makedirs(path)
    return path


def crop(rng, img, min_side, max_side):
    h, w = img.shape[:2]
    ch = int(rng.integers(min_side, min(max_side, h) + 1))
    cw = int(rng.integers(min_side, min(max_side, w) + 1))
    y = int(rng.integers(0, h - ch + 1))
    x = int(rng.integers(0, w - cw + 1))
    return img[y : y + ch, x : x + cw]


def save_jpeg(path, arr, quality, progressive, **extra):
    buf = io.BytesIO()
    Image.fromarray(arr).save(
        buf, "JPEG", quality=quality, progressive=progressive, **extra
    )
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def make_progressive(rng):
    """512 colour crops of real photographs, one class per source photo.

    Encoded directly as progressive at quality 90-95; this yields the same
    DCT coefficients as a lossless progressive transcode of a baseline file
    at that quality, with libjpeg's default 10-scan script.
    """
    root = reset("progressive")
    per_class = 64
    for label, name in enumerate(COLOR_SOURCES):
        img = getattr(sk, name)()
        cls = os.path.join(root, name)
        os.makedirs(cls)
        for k in range(per_class):
            arr = np.ascontiguousarray(crop(rng, img, 64, 176))
            q = int(rng.integers(90, 96))
            extra = {}
            # Every 16th file carries restart markers; a few carry APPn/COM.
            if k % 16 == 3:
                extra["restart_marker_blocks"] = int(rng.integers(1, 8))
            if k % 16 == 7:
                extra["exif"] = EXIF_STUB
            if k % 16 == 11:
                extra["comment"] = b"pcr fixture"
            save_jpeg(os.path.join(cls, f"{k:03d}.jpg"), arr, q, True, **extra)


def make_gray(rng):
    root = reset("gray")
    for i, name in enumerate(GRAY_SOURCES):
        arr = np.ascontiguousarray(crop(rng, getattr(sk, name)(), 48, 96))
        save_jpeg(os.path.join(root, f"{i:02d}_{name}.jpg"), arr, 92, True)


def make_baseline(rng):
    root = reset("baseline")
    for i, name in enumerate(COLOR_SOURCES[:4]):
        arr = np.ascontiguousarray(crop(rng, getattr(sk, name)(), 48, 96))
        save_jpeg(os.path.join(root, f"{i:02d}_{name}.jpg"), arr, 95, False)


def make_engineered(rng, n_per_class=48, amplitude=10.0, offset=16.0, bg_sigma=8.0, noise=3.0):
    """Two-class corpus with a coarse and a fine class signal.

    Class 0 is brighter by `offset` and carries a +-`amplitude` texture; class
    1 is darker and carries the inverted texture. The texture has a 4-pixel
    period in both axes, phased so that 2x2 area averaging keeps it at full
    strength. It lands on mid-band luma DCT coefficients, which libjpeg's
    default script withholds until the fifth scan, so the early scan groups
    only see the brightness offset. With a zero model the gradient cosine of
    those groups is about offset / hypot(offset, amplitude).
    """
    root = reset("engineered")
    yy, xx = np.mgrid[0:64, 0:64]
    pattern = np.sign(np.cos(np.pi * xx / 2 - np.pi / 4)) * np.sign(
        np.cos(np.pi * yy / 2 - np.pi / 4)
    )
    lines = []
    for label in (0, 1):
        cls = os.path.join(root, f"class{label}")
        os.makedirs(cls)
        sign = 1.0 if label == 0 else -1.0
        for k in range(n_per_class):
            # Smooth random background shared by both classes.
            coarse = rng.normal(128.0, bg_sigma, size=(4, 4, 3))
            bg = np.kron(coarse, np.ones((16, 16, 1)))
            img = bg + sign * (offset + amplitude * pattern[..., None])
            img = img + rng.normal(0.0, noise, size=img.shape)
            arr = np.clip(np.round(img), 0, 255).astype(np.uint8)
            rel = f"class{label}/{k:03d}.jpg"
            save_jpeg(os.path.join(root, rel), arr, 90, True)
            lines.append(f"{rel}\t{label}")
    with open(os.path.join(root, "labels.tsv"), "w") as f:
        f.write("\n".join(lines) + "\n")


def write_ppm(path, arr):
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def luma(arr):
    a = arr.astype(np.float64)
    return 0.299 * a[..., 0] + 0.587 * a[..., 1] + 0.114 * a[..., 2]


def make_mssim(rng):
    import tensorflow as tf

    root = reset("mssim")
    weights = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333]

    def scales_for(h, w):
        n = 0
        while n < 5 and min(h, w) >= 11:
            n += 1
            h, w = (h + 1) // 2, (w + 1) // 2
        return n

    def reference(a, b):
        ya = tf.constant(luma(a)[None, ..., None])
        yb = tf.constant(luma(b)[None, ..., None])
        n = scales_for(*a.shape[:2])
        pf = weights[:n]
        total = sum(pf)
        pf = [p / total for p in pf]
        v = tf.image.ssim_multiscale(
            ya, yb, 255.0, power_factors=pf, filter_size=11, filter_sigma=1.5
        )
        return float(v.numpy()[0]), n

    cases = []
    astro = sk.astronaut()
    coffee = sk.coffee()
    chelsea = sk.chelsea()

    a = astro[0:256, 128:384]
    cases.append(("astro_noise", a, np.clip(a + rng.normal(0, 12, a.shape), 0, 255)))
    b = coffee[50:250, 100:330]
    blur = np.array(Image.fromarray(b).resize((115, 100)).resize((230, 200)))
    cases.append(("coffee_blur", b, blur))
    c = chelsea[40:230, 60:260]
    jbuf = io.BytesIO()
    Image.fromarray(c).save(jbuf, "JPEG", quality=20)
    cases.append(("chelsea_jpeg20", c, np.array(Image.open(jbuf))))
    d = astro[300:364, 200:280]
    cases.append(("astro_small_3scale", d, np.clip(d + rng.normal(0, 20, d.shape), 0, 255)))
    e = coffee[0:181, 0:177]
    cases.append(("coffee_odd_shift", e, coffee[2:183, 1:178]))

    lines = ["name,scales,mssim"]
    for name, x, y in cases:
        x = np.asarray(x).astype(np.uint8)
        y = np.asarray(y).round().astype(np.uint8)
        write_ppm(os.path.join(root, f"{name}_a.ppm"), x)
        write_ppm(os.path.join(root, f"{name}_b.ppm"), y)
        v, n = reference(x, y)
        lines.append(f"{name},{n},{v:.10f}")
    with open(os.path.join(root, "reference.csv"), "w") as f:
        f.write("\n".join(lines) + "\n")


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--only", default="progressive,gray,baseline,engineered,mssim")
    args = p.parse_args()
    parts = set(args.only.split(","))
    os.makedirs(ROOT, exist_ok=True)
    if "progressive" in parts:
        make_progressive(np.random.default_rng(20240501))
    if "gray" in parts:
        make_gray(np.random.default_rng(7))
    if "baseline" in parts:
        make_baseline(np.random.default_rng(11))
    if "engineered" in parts:
        make_engineered(np.random.default_rng(3))
    if "mssim" in parts:
        make_mssim(np.random.default_rng(5))


if __name__ == "__main__":
    main()
