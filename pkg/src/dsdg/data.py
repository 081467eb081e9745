"""Dataset manifests, live/spoof pairing, depth-map ingestion, and a synthetic
toy corpus used for desk-scale testing.

Manifest format: one sample per line, five tab-separated fields
``image_path<TAB>label<TAB>identity_id<TAB>spoof_type<TAB>depth_path``
with ``-`` marking an absent spoof_type or depth_path. Relative paths are
resolved against the manifest's directory.

Depth files are 32x32 grids in [0, 1]: either whitespace-separated decimal
text (row-major) or an 8-bit grayscale image divided by 255, picked by file
extension.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ManifestError, PairingError, ValidationError

LABEL_LIVE = "live"
LABEL_SPOOF = "spoof"
DEPTH_SIZE = 32
GENERATED_TYPE = "generated"

_IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}


@dataclass(frozen=True)
class SampleRecord:
    """One manifest line: an image on disk plus its labels."""

    image_path: Path
    label: str
    identity_id: str
    spoof_type: str | None = None
    depth_path: Path | None = None


@dataclass
class PairedSample:
    """A live image and a spoofing image of the same identity.

    Images are (3, H, W) float32 in [0, 1]; depth grids are (32, 32) float32
    in [0, 1] with the spoof grid identically zero.
    """

    live: np.ndarray
    spoof: np.ndarray
    identity_id: str
    spoof_type: int
    spoof_type_name: str
    live_depth: np.ndarray
    spoof_depth: np.ndarray


# ---------------------------------------------------------------------------
# file IO


def load_image(path: Path | str) -> np.ndarray:
    """Read an RGB image as (3, H, W) float32 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(image: np.ndarray, path: Path | str) -> None:
    """Write a (3, H, W) array in [0, 1] as an 8-bit RGB file."""
    arr = np.clip(image, 0.0, 1.0)
    u8 = (arr.transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path)


def load_depth(path: Path | str) -> np.ndarray:
    """Read a 32x32 depth grid, auto-detecting text vs. grayscale image."""
    path = Path(path)
    if path.suffix.lower() in _IMAGE_EXTENSIONS:
        with Image.open(path) as im:
            grid = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    else:
        grid = np.loadtxt(path, dtype=np.float32)
    validate_depth(grid, name=str(path))
    return grid


def save_depth(grid: np.ndarray, path: Path | str) -> None:
    """Write a 32x32 depth grid; text for .txt/.depth, grayscale otherwise."""
    validate_depth(grid, name=str(path))
    path = Path(path)
    if path.suffix.lower() in _IMAGE_EXTENSIONS:
        u8 = (np.clip(grid, 0.0, 1.0) * 255.0).round().astype(np.uint8)
        Image.fromarray(u8, mode="L").save(path)
    else:
        np.savetxt(path, grid, fmt="%.8f")


def validate_depth(grid: np.ndarray, name: str = "depth grid") -> None:
    if grid.shape != (DEPTH_SIZE, DEPTH_SIZE):
        raise ValidationError(
            f"{name}: expected {DEPTH_SIZE}x{DEPTH_SIZE} grid, got {grid.shape}"
        )
    if not np.isfinite(grid).all():
        raise ValidationError(f"{name}: non-finite entries")
    if grid.min() < 0.0 or grid.max() > 1.0:
        raise ValidationError(f"{name}: values outside [0, 1]")


# ---------------------------------------------------------------------------
# manifests


def _parse_line(line: str, lineno: int, base: Path) -> SampleRecord:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 5:
        raise ManifestError(f"line {lineno}: expected 5 tab-separated fields, got {len(fields)}")
    image_path, label, identity_id, spoof_type, depth_path = fields
    if label not in (LABEL_LIVE, LABEL_SPOOF):
        raise ManifestError(f"line {lineno}: unknown label {label!r}")
    if not identity_id:
        raise ManifestError(f"line {lineno}: empty identity_id")
    if label == LABEL_LIVE and spoof_type != "-":
        raise ManifestError(f"line {lineno}: live sample must not carry a spoof_type")
    if label == LABEL_SPOOF and spoof_type == "-":
        raise ManifestError(
            f"line {lineno}: spoof sample needs a spoof_type (use 'unknown' if unlabeled)"
        )
    return SampleRecord(
        image_path=_resolve(base, image_path),
        label=label,
        identity_id=identity_id,
        spoof_type=None if spoof_type == "-" else spoof_type,
        depth_path=None if depth_path == "-" else _resolve(base, depth_path),
    )


def _resolve(base: Path, raw: str) -> Path:
    p = Path(raw)
    return p if p.is_absolute() else base / p


def load_manifest(path: Path | str) -> list[SampleRecord]:
    """Parse a manifest and verify that every referenced file resolves."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = _parse_line(line, lineno, base)
            if not rec.image_path.exists():
                raise ManifestError(f"line {lineno}: image file not found: {rec.image_path}")
            if rec.depth_path is not None and not rec.depth_path.exists():
                raise ManifestError(f"line {lineno}: depth file not found: {rec.depth_path}")
            records.append(rec)
    return records


def write_manifest(records: list[SampleRecord], path: Path | str) -> None:
    """Write records in the manifest format, with paths made relative when possible."""
    path = Path(path)
    base = path.parent

    def fmt(p: Path | None) -> str:
        if p is None:
            return "-"
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    lines = []
    for rec in records:
        lines.append(
            "\t".join(
                [
                    fmt(rec.image_path),
                    rec.label,
                    rec.identity_id,
                    rec.spoof_type if rec.spoof_type is not None else "-",
                    fmt(rec.depth_path),
                ]
            )
        )
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def spoof_type_index(records_or_names) -> dict[str, int]:
    """Map distinct spoof-type names to dense indices (sorted for determinism).

    Samples whose type is unlabeled share the literal name "unknown", so all
    of them collapse into a single class.
    """
    names = set()
    for item in records_or_names:
        if isinstance(item, SampleRecord):
            if item.spoof_type is not None:
                names.add(item.spoof_type)
        else:
            names.add(item)
    return {name: idx for idx, name in enumerate(sorted(names))}


# ---------------------------------------------------------------------------
# pairing


def build_pairs(records: list[SampleRecord], pairing: str = "by_identity") -> list[PairedSample]:
    """Assemble PairedSamples from manifest records, loading pixels and depth.

    ``by_identity`` matches each spoof record (in file order) with the
    lowest-index live record of the same identity. ``none`` is the unpaired
    mode for corpora without identity-matched pairs: spoof record i is paired
    positionally with live record ``i % n_live`` and identity-consistency
    losses should be disabled downstream.
    """
    if pairing not in ("by_identity", "none"):
        raise ValidationError(f"unknown pairing mode {pairing!r}")
    lives = [r for r in records if r.label == LABEL_LIVE]
    spoofs = [r for r in records if r.label == LABEL_SPOOF]
    if not spoofs:
        return []
    if not lives:
        raise PairingError("no live records to pair against")

    type_index = spoof_type_index(records)
    first_live: dict[str, SampleRecord] = {}
    for rec in lives:
        first_live.setdefault(rec.identity_id, rec)

    pairs = []
    for i, spoof_rec in enumerate(spoofs):
        if pairing == "by_identity":
            live_rec = first_live.get(spoof_rec.identity_id)
            if live_rec is None:
                raise PairingError(
                    f"spoof identity {spoof_rec.identity_id!r} has no live counterpart"
                )
        else:
            live_rec = lives[i % len(lives)]
        if live_rec.depth_path is None:
            raise PairingError(
                f"live record {live_rec.image_path} lacks the required depth file"
            )
        name = spoof_rec.spoof_type if spoof_rec.spoof_type is not None else "unknown"
        pairs.append(
            PairedSample(
                live=load_image(live_rec.image_path),
                spoof=load_image(spoof_rec.image_path),
                identity_id=spoof_rec.identity_id,
                spoof_type=type_index[name],
                spoof_type_name=name,
                live_depth=load_depth(live_rec.depth_path),
                spoof_depth=np.zeros((DEPTH_SIZE, DEPTH_SIZE), dtype=np.float32),
            )
        )
    return pairs


def write_corpus(pairs: list[PairedSample], out_dir: Path | str, prefix: str = "pair") -> Path:
    """Persist paired samples as images + depth files and return the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "depth").mkdir(parents=True, exist_ok=True)
    records = []
    for i, pair in enumerate(pairs):
        stem = f"{prefix}_{i:05d}"
        live_img = out_dir / "images" / f"{stem}_live.png"
        spoof_img = out_dir / "images" / f"{stem}_spoof.png"
        live_dep = out_dir / "depth" / f"{stem}_live.txt"
        save_image(pair.live, live_img)
        save_image(pair.spoof, spoof_img)
        save_depth(pair.live_depth, live_dep)
        records.append(
            SampleRecord(live_img, LABEL_LIVE, pair.identity_id, None, live_dep)
        )
        records.append(
            SampleRecord(spoof_img, LABEL_SPOOF, pair.identity_id, pair.spoof_type_name, None)
        )
    manifest = out_dir / "manifest.tsv"
    write_manifest(records, manifest)
    return manifest


# ---------------------------------------------------------------------------
# synthetic toy corpus


def toy_live_depth() -> np.ndarray:
    """The fixed smooth depth bump assigned to every toy live face."""
    i = np.arange(DEPTH_SIZE, dtype=np.float64)
    g = np.exp(-((i - (DEPTH_SIZE - 1) / 2.0) ** 2) / (2.0 * 16.0**2))
    return np.outer(g, g).astype(np.float32)


def _toy_face(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / max(size - 1, 1)
    base = rng.uniform(0.15, 0.45, size=3).astype(np.float32)
    slope = rng.uniform(-0.2, 0.2, size=3).astype(np.float32)
    img = np.empty((3, size, size), dtype=np.float32)
    for c in range(3):
        img[c] = base[c] + slope[c] * xx + 0.05 * yy

    # face: an identity-specific ellipse with two eye dots
    cx, cy = rng.uniform(0.40, 0.60, size=2)
    ax_, ay_ = rng.uniform(0.22, 0.34, size=2)
    skin = rng.uniform(0.55, 0.9, size=3).astype(np.float32)
    face = (((xx - cx) / ax_) ** 2 + ((yy - cy) / ay_) ** 2) <= 1.0
    for c in range(3):
        img[c][face] = skin[c]
    eye_dx = rng.uniform(0.08, 0.14)
    eye_r = rng.uniform(0.02, 0.04)
    for sign in (-1.0, 1.0):
        eye = ((xx - (cx + sign * eye_dx)) ** 2 + (yy - (cy - 0.08)) ** 2) <= eye_r**2
        for c in range(3):
            img[c][eye] = 0.05
    return np.clip(img, 0.0, 1.0)


def _apply_spoof(image: np.ndarray, kind: int, rng: np.random.Generator) -> np.ndarray:
    """Stamp a detectable, type-specific perturbation onto a copy of the image."""
    out = image.copy()
    size = image.shape[-1]
    variant = kind % 4
    strength = 1.0 + 0.25 * (kind // 4)
    if variant == 0:  # global color cast
        out[0] += 0.25 * strength
        out[1] -= 0.10 * strength
        out[2] -= 0.20 * strength
    elif variant == 1:  # dark grid overlay
        step = max(size // 8, 2)
        out[:, ::step, :] *= 0.3
        out[:, :, ::step] *= 0.3
    elif variant == 2:  # horizontal luminance banding
        rows = np.arange(size, dtype=np.float32)
        band = 0.18 * strength * np.sin(2.0 * np.pi * rows * 6.0 / size)
        out += band[None, :, None]
    else:  # speckle noise
        out += rng.normal(0.0, 0.16 * strength, size=out.shape).astype(np.float32)
    return np.clip(out, 0.0, 1.0)


def synth_toy_dataset(
    n_identities: int,
    spoof_types: list[str],
    image_size: int = 256,
    seed: int = 0,
) -> list[PairedSample]:
    """Deterministic procedural corpus: one pair per (identity, spoof type)."""
    if n_identities < 1:
        raise ValidationError("n_identities must be >= 1")
    if not spoof_types:
        raise ValidationError("need at least one spoof type")
    if image_size < 32 or image_size % 32 != 0:
        raise ValidationError(
            f"image_size must be >= 32 and divisible by 32, got {image_size}"
        )

    type_index = spoof_type_index(spoof_types)
    root = np.random.default_rng(seed)
    identity_seeds = root.integers(0, 2**63 - 1, size=n_identities)
    live_depth = toy_live_depth()
    zero_depth = np.zeros((DEPTH_SIZE, DEPTH_SIZE), dtype=np.float32)

    pairs = []
    for ident in range(n_identities):
        id_rng = np.random.default_rng(identity_seeds[ident])
        face = _toy_face(id_rng, image_size)
        noise_seeds = id_rng.integers(0, 2**63 - 1, size=len(spoof_types))
        for k, name in enumerate(spoof_types):
            spoof_rng = np.random.default_rng(noise_seeds[k])
            pairs.append(
                PairedSample(
                    live=face.copy(),
                    spoof=_apply_spoof(face, k, spoof_rng),
                    identity_id=f"toy-{ident:03d}",
                    spoof_type=type_index[name],
                    spoof_type_name=name,
                    live_depth=live_depth.copy(),
                    spoof_depth=zero_depth.copy(),
                )
            )
    return pairs


def mean_live_depth(pairs: list[PairedSample]) -> np.ndarray:
    """Average ground-truth live depth over a corpus (prior for generated lives)."""
    if not pairs:
        raise ValidationError("empty corpus")
    return np.mean([p.live_depth for p in pairs], axis=0).astype(np.float32)


def relabel_identity(pair: PairedSample, identity_id: str) -> PairedSample:
    return replace(pair, identity_id=identity_id)
