"""Point-cloud files, flat key=value config text and PPM overlays."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .projection import DepthImage, PointCloud, pnm_header

_BIN_RECORD = np.dtype("<f4")


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# point clouds

def load_point_cloud(path) -> PointCloud:
    """Read ``.bin`` (float32 LE x, y, z, intensity records) or ``.xyz`` (ASCII x y z)."""
    path = Path(path)
    suffix = path.suffix.lower()
    data = path.read_bytes()
    if suffix == ".bin":
        if len(data) % 16:
            whole = len(data) - len(data) % 16
            raise FormatError(f"{path}: truncated record at byte offset {whole} "
                              f"({len(data)} bytes is not a multiple of 16)")
        arr = np.frombuffer(data, dtype=_BIN_RECORD).reshape(-1, 4).astype(float)
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr).all(axis=1))[0])
            raise FormatError(f"{path}: non-finite value in record at byte offset {bad * 16}")
        return PointCloud(arr[:, :3], arr[:, 3])
    if suffix == ".xyz":
        pts = []
        offset = 0
        for line in data.splitlines(keepends=True):
            fields = line.split(b"#", 1)[0].split()
            if fields:
                if len(fields) != 3:
                    raise FormatError(f"{path}: expected 3 values at byte offset {offset}, got {len(fields)}")
                try:
                    pts.append([float(f) for f in fields])
                except ValueError:
                    raise FormatError(f"{path}: malformed number at byte offset {offset}") from None
            offset += len(line)
        arr = np.array(pts, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"{path}: non-finite coordinate")
        return PointCloud(arr)
    raise FormatError(f"{path}: unknown point-cloud extension {suffix!r} (want .bin or .xyz)")


def save_point_cloud(path, cloud: PointCloud) -> None:
    path = Path(path)
    pts = cloud.points
    if path.suffix.lower() == ".bin":
        inten = cloud.intensity if cloud.intensity is not None else np.zeros(len(pts))
        rec = np.column_stack([pts, inten]).astype(_BIN_RECORD)
        path.write_bytes(rec.tobytes())
    elif path.suffix.lower() == ".xyz":
        path.write_text("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()))
    else:
        raise FormatError(f"{path}: unknown point-cloud extension (want .bin or .xyz)")


# ---------------------------------------------------------------------------
# config text

def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines, ``#`` comments, blank lines ignored; a repeated key keeps the last value."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise FormatError(f"{source}:{n}: expected 'key = value'")
        out[key] = value.strip()
    return out


def load_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text(), str(path))


def dump_config(values: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())


# ---------------------------------------------------------------------------
# PPM

def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an H x W x 3 image")
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.astype(np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, offset = pnm_header(data, 4)
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise FormatError(f"{path}: only 8-bit binary PPM (P6) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    body = data[offset:offset + w * h * 3]
    if len(body) != w * h * 3:
        raise FormatError(f"{path}: pixel data truncated")
    return np.frombuffer(body, np.uint8).reshape(h, w, 3).copy()


def depth_colormap(t: np.ndarray) -> np.ndarray:
    """Blue (near) to red (far) ramp for ``t`` in [0, 1]."""
    t = np.clip(t, 0.0, 1.0)[..., None]
    stops = np.array([[0, 0, 255], [0, 255, 255], [0, 255, 0], [255, 255, 0], [255, 0, 0]], float)
    x = t * (len(stops) - 1)
    i = np.minimum(x.astype(int), len(stops) - 2)
    f = x - i
    return np.floor(stops[i[..., 0]] * (1 - f) + stops[i[..., 0] + 1] * f + 0.5).astype(np.uint8)


def gray_background(depth: np.ndarray) -> np.ndarray:
    """Gray rendering of a depth map: near is bright, no-data black."""
    valid = depth > 0
    g = np.zeros(depth.shape)
    if np.any(valid):
        lo, hi = depth[valid].min(), depth[valid].max()
        span = hi - lo if hi > lo else 1.0
        g[valid] = 230.0 - 180.0 * (depth[valid] - lo) / span
    return np.repeat(np.floor(g + 0.5).astype(np.uint8)[..., None], 3, axis=2)


def render_overlay(ldp: DepthImage, background, out_path) -> np.ndarray:
    """Write a PPM with colormapped LiDAR depth painted over a gray background.

    ``background`` is a depth map (``DepthImage`` or 2-D array) or an
    H x W x 3 uint8 image. Returns the written pixels.
    """
    if isinstance(background, DepthImage):
        background = background.depth
    background = np.asarray(background)
    if background.shape[:2] != ldp.depth.shape:
        raise ValueError("overlay inputs differ in resolution")
    img = gray_background(background.astype(float)) if background.ndim == 2 else background.astype(np.uint8).copy()
    d = ldp.depth
    hit = d > 0
    if np.any(hit):
        lo, hi = d[hit].min(), d[hit].max()
        span = hi - lo if hi > lo else 1.0
        img[hit] = depth_colormap((d[hit] - lo) / span)
    write_ppm(out_path, img)
    return img
