"""Dataset layout, spectrum file formats and the synthetic beamforming oracle.

On-disk layout::

    root/
      positions.csv        id,x,y,z
      split.csv            id,split   (optional; train/test)
      normalization.csv    id,raw_max (optional sidecar)
      spectra/<id>.pgm     binary P5, width 90, height 360, maxval 255
      spectra/<id>.f32     360*90 little-endian float32, azimuth-major
"""
from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_AZ, N_EL = 360, 90
SPEED_OF_LIGHT = 299_792_458.0


class DatasetError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        head = "; ".join(self.problems[:10])
        more = f" (+{len(self.problems) - 10} more)" if len(self.problems) > 10 else ""
        super().__init__(f"{len(self.problems)} dataset problem(s): {head}{more}")


# ---------------------------------------------------------------------------
# spectrum files


def write_pgm(path, spectrum: np.ndarray) -> None:
    """Write a [0, 1] spectrum as 8-bit P5 (values clamped)."""
    spectrum = np.asarray(spectrum, dtype=np.float64)
    h, w = spectrum.shape
    pix = np.round(np.clip(spectrum, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 graymap, scaled by maxval into [0, 1]; shape (height, width)."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ValueError(f"{path}: truncated PGM header")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PGM header") from None
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height
    body = data[pos:pos + count * dtype.itemsize]
    if len(body) < count * dtype.itemsize:
        raise ValueError(f"{path}: truncated PGM raster")
    return np.frombuffer(body, dtype=dtype).reshape(height, width).astype(np.float64) / maxval


def write_f32(path, spectrum: np.ndarray) -> None:
    Path(path).write_bytes(np.ascontiguousarray(spectrum, dtype="<f4").tobytes())


def read_f32(path, shape=(N_AZ, N_EL)) -> np.ndarray:
    raw = Path(path).read_bytes()
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


# ---------------------------------------------------------------------------
# dataset


@dataclass
class TxSample:
    id: int
    tx_position: np.ndarray
    spectrum: np.ndarray


@dataclass
class Dataset:
    samples: list[TxSample]
    split: dict[int, str]
    split_source: str
    normalization: dict[int, tuple[float, float]] = field(default_factory=dict)

    def subset(self, name: str) -> list[TxSample]:
        return [s for s in self.samples if self.split[s.id] == name]

    @property
    def train(self) -> list[TxSample]:
        return self.subset("train")

    @property
    def test(self) -> list[TxSample]:
        return self.subset("test")

    def bounds(self, name: str = "train") -> tuple[np.ndarray, np.ndarray]:
        pos = np.array([s.tx_position for s in (self.subset(name) or self.samples)])
        return pos.min(axis=0), pos.max(axis=0)


def hashed_split(sample_id: int) -> str:
    """Deterministic 80/20 assignment from the CRC32 of the id."""
    return "test" if zlib.crc32(str(sample_id).encode()) % 5 == 0 else "train"


def _read_csv(path: Path, header: list[str]) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != header:
        raise DatasetError([f"{path.name}: header must be {','.join(header)}"])
    return [r for r in rows[1:] if r]


def load_dataset(root) -> Dataset:
    root = Path(root)
    if not (root / "positions.csv").exists():
        raise DatasetError([f"missing {root / 'positions.csv'}"])
    problems: list[str] = []
    positions: dict[int, np.ndarray] = {}
    for lineno, row in enumerate(_read_csv(root / "positions.csv", ["id", "x", "y", "z"]), start=2):
        try:
            sid = int(row[0])
            xyz = np.array([float(v) for v in row[1:4]])
            if len(row) != 4 or not np.isfinite(xyz).all():
                raise ValueError
        except (ValueError, IndexError):
            problems.append(f"positions.csv line {lineno}: malformed row {row!r}")
            continue
        if sid in positions:
            problems.append(f"positions.csv line {lineno}: duplicate id {sid}")
        positions[sid] = xyz

    samples, normalization = [], {}
    missing = []
    for sid, xyz in positions.items():
        pgm = root / "spectra" / f"{sid}.pgm"
        f32 = root / "spectra" / f"{sid}.f32"
        try:
            if f32.exists():
                spec = read_f32(f32)
                lo, hi = float(spec.min()), float(spec.max())
                if lo < 0.0 or hi > 1.0:
                    span = hi - lo if hi > lo else 1.0
                    spec = ((spec - lo) / span).astype(np.float32)
                    normalization[sid] = (lo, hi)
            elif pgm.exists():
                spec = read_pgm(pgm).astype(np.float32)
            else:
                missing.append(sid)
                continue
        except ValueError as exc:
            problems.append(str(exc))
            continue
        if spec.shape != (N_AZ, N_EL):
            problems.append(f"spectrum {sid}: shape {spec.shape}, expected ({N_AZ}, {N_EL})")
            continue
        samples.append(TxSample(sid, xyz, spec))
    if missing:
        problems.append(f"no spectrum file for ids {missing}")

    split_path = root / "split.csv"
    if split_path.exists():
        split = {}
        for row in _read_csv(split_path, ["id", "split"]):
            sid, name = int(row[0]), row[1].strip()
            if name not in ("train", "test"):
                problems.append(f"split.csv: id {sid} has unknown split {name!r}")
            split[sid] = name
        unknown = sorted(set(split) - set(positions))
        unassigned = sorted(set(positions) - set(split))
        if unknown:
            problems.append(f"split.csv: ids not in positions.csv {unknown[:20]}")
        if unassigned:
            problems.append(f"split.csv: {len(unassigned)} ids without a split, e.g. {unassigned[:20]}")
        source = "split.csv"
    else:
        split = {sid: hashed_split(sid) for sid in positions}
        source = "hash"
    if problems:
        raise DatasetError(problems)
    return Dataset(samples, split, source, normalization)


# ---------------------------------------------------------------------------
# synthetic oracle


@dataclass
class Scatterer:
    position: np.ndarray
    gain: complex


@dataclass
class SyntheticScene:
    scatterers: list[Scatterer]
    rows: int = 4
    cols: int = 4
    wavelength: float = SPEED_OF_LIGHT / 915e6
    spacing: float | None = None
    rx_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    los_gain: complex = 0.0
    tx_region: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        if self.spacing is None:
            self.spacing = self.wavelength / 2
        if self.rows < 1 or self.cols < 1:
            raise ValueError("array needs at least one element per axis")
        if not self.wavelength > 0 or not self.spacing > 0:
            raise ValueError("wavelength and spacing must be positive")
        self.rx_origin = np.asarray(self.rx_origin, dtype=np.float64)

    def element_positions(self) -> np.ndarray:
        """(rows, cols, 3) element coordinates in meters."""
        m, n = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        pos = np.stack([m * self.spacing, n * self.spacing, np.zeros_like(m, dtype=float)], axis=-1)
        return pos + self.rx_origin


def direction(phi_deg, theta_deg) -> np.ndarray:
    phi, theta = np.radians(phi_deg), np.radians(theta_deg)
    return np.stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), np.sin(theta)], axis=-1)


def steering_phase(m: int, n: int, phi_deg, theta_deg, scene: SyntheticScene):
    """Geometric phase of element (m, n) relative to (0, 0) for arrival direction (phi, theta)."""
    if not (0 <= m < scene.rows and 0 <= n < scene.cols):
        raise IndexError(f"element ({m}, {n}) outside {scene.rows}x{scene.cols} array")
    phi, theta = np.radians(phi_deg), np.radians(theta_deg)
    return (2 * np.pi / scene.wavelength) * scene.spacing * np.cos(theta) * (m * np.cos(phi) + n * np.sin(phi))


def received_signals(scene: SyntheticScene, tx) -> np.ndarray:
    """(rows, cols) complex element signals from two-hop scattering plus optional line of sight."""
    tx = np.asarray(tx, dtype=np.float64)
    elems = scene.element_positions()
    k = 2 * np.pi / scene.wavelength
    y = np.zeros(elems.shape[:2], dtype=complex)
    for sc in scene.scatterers:
        r = np.asarray(sc.position, dtype=np.float64)
        d1 = np.linalg.norm(tx - r)
        d2 = np.linalg.norm(elems - r, axis=-1)
        if d1 < 1e-9 or np.any(d2 < 1e-9):
            raise ValueError(f"scatterer at {r.tolist()} coincides with the transmitter or an element")
        y += sc.gain * np.exp(-1j * k * (d1 + d2)) / (d1 * d2)
    if scene.los_gain:
        d = np.linalg.norm(elems - tx, axis=-1)
        if np.any(d < 1e-9):
            raise ValueError("transmitter coincides with an array element")
        y += scene.los_gain * np.exp(-1j * k * d) / d
    return y


def beamform(scene: SyntheticScene, y: np.ndarray, n_az: int = N_AZ, n_el: int = N_EL) -> np.ndarray:
    """Raw spatial power spectrum (n_az, n_el) at pixel-center directions."""
    phi = (np.arange(n_az) + 0.5) * 360.0 / n_az
    theta = (np.arange(n_el) + 0.5) * 90.0 / n_el
    ph, th = np.meshgrid(np.radians(phi), np.radians(theta), indexing="ij")
    m, n = np.meshgrid(np.arange(scene.rows), np.arange(scene.cols), indexing="ij")
    k = 2 * np.pi / scene.wavelength * scene.spacing
    # (n_az, n_el, M*N) steering phases
    sigma = k * np.cos(th)[..., None] * (m.ravel() * np.cos(ph)[..., None] + n.ravel() * np.sin(ph)[..., None])
    acc = np.exp(-1j * sigma) @ y.ravel()
    return (np.abs(acc) ** 2) / y.size


def synth_spectrum(scene: SyntheticScene, tx, normalize: bool = True, return_raw_max: bool = False):
    if not scene.scatterers:
        raise ValueError("scene needs at least one scatterer")
    p = beamform(scene, received_signals(scene, tx))
    peak = float(p.max())
    if normalize:
        p = p / peak if peak > 0 else p
    return (p, peak) if return_raw_max else p


def make_synthetic_dataset(scene: SyntheticScene, out_dir, n_train: int, n_test: int, tx_region=None,
                           seed: int = 0, fmt: str = "f32") -> Path:
    if n_train < 1 or n_test < 1:
        raise ValueError("need at least one train and one test sample")
    region = tx_region if tx_region is not None else scene.tx_region
    if region is None:
        raise ValueError("no transmitter region given")
    lo, hi = (np.asarray(v, dtype=np.float64) for v in region)
    out = Path(out_dir)
    (out / "spectra").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    total = n_train + n_test
    txs = rng.uniform(lo, hi, size=(total, 3))
    rows_pos, rows_split, rows_norm = [], [], []
    for sid in range(total):
        spec, peak = synth_spectrum(scene, txs[sid], return_raw_max=True)
        if fmt == "f32":
            write_f32(out / "spectra" / f"{sid}.f32", spec)
        elif fmt == "pgm":
            write_pgm(out / "spectra" / f"{sid}.pgm", spec)
        else:
            raise ValueError(f"unknown spectrum format {fmt!r}")
        rows_pos.append([sid, *(repr(float(v)) for v in txs[sid])])
        rows_split.append([sid, "train" if sid < n_train else "test"])
        rows_norm.append([sid, repr(peak)])
    _write_csv(out / "positions.csv", ["id", "x", "y", "z"], rows_pos)
    _write_csv(out / "split.csv", ["id", "split"], rows_split)
    _write_csv(out / "normalization.csv", ["id", "raw_max"], rows_norm)
    return out


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# scene description files


def parse_scene(text: str) -> SyntheticScene:
    """Scene from flat ``key=value`` lines (``#`` comments).

    Keys: ``array.rows``, ``array.cols``, ``array.frequency_hz`` or
    ``array.wavelength_m``, ``array.spacing_m``, ``rx.origin=x,y,z``,
    ``los.gain=re,im``, ``tx.region=x0,y0,z0,x1,y1,z1`` and any number of
    ``scatterer.<name>=x,y,z,gain_re,gain_im``.
    """
    kv: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"scene line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        kv[key] = value

    def floats(key, n):
        vals = [float(v) for v in kv.pop(key).split(",")]
        if len(vals) != n:
            raise ValueError(f"scene key {key}: expected {n} values")
        return vals

    scatterers = []
    for key in sorted(k for k in kv if k.startswith("scatterer.")):
        x, y, z, gr, gi = floats(key, 5)
        scatterers.append(Scatterer(np.array([x, y, z]), complex(gr, gi)))
    args = {}
    if "array.rows" in kv:
        args["rows"] = int(kv.pop("array.rows"))
    if "array.cols" in kv:
        args["cols"] = int(kv.pop("array.cols"))
    if "array.frequency_hz" in kv:
        args["wavelength"] = SPEED_OF_LIGHT / float(kv.pop("array.frequency_hz"))
    if "array.wavelength_m" in kv:
        args["wavelength"] = float(kv.pop("array.wavelength_m"))
    if "array.spacing_m" in kv:
        args["spacing"] = float(kv.pop("array.spacing_m"))
    if "rx.origin" in kv:
        args["rx_origin"] = np.array(floats("rx.origin", 3))
    if "los.gain" in kv:
        args["los_gain"] = complex(*floats("los.gain", 2))
    if "tx.region" in kv:
        v = floats("tx.region", 6)
        args["tx_region"] = (np.array(v[:3]), np.array(v[3:]))
    if kv:
        raise ValueError(f"unknown scene keys: {', '.join(sorted(kv))}")
    if not scatterers:
        raise ValueError("scene defines no scatterers")
    return SyntheticScene(scatterers, **args)


def load_scene(path) -> SyntheticScene:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scene file not found: {path}")
    return parse_scene(path.read_text())
