"""Dataset manifests: JSON lists of images with optional labels, boxes and gaze.

Example::

    {
      "input_size": {"h": 64, "w": 64, "c": 3},
      "entries": [
        {"image": "img_000.png", "target_class": 2,
         "bbox": {"x": 12, "y": 12, "w": 16, "h": 16},
         "gaze_fixations": [[20, 21], [18, 25]]}
      ]
    }

``root`` defaults to the manifest's directory.  Boxes and gaze points are in
pixels of the stored image and are rescaled together with it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from PIL import Image as PILImage

from .imaging import BBox


@dataclass
class ManifestEntry:
    image_path: Path
    target_class: Optional[int] = None
    bbox: Optional[BBox] = None
    gaze_fixations: Optional[list] = None
    stored_size: tuple = (0, 0)

    @property
    def stem(self) -> str:
        return self.image_path.stem


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry]
    root: Path
    input_size: Optional[tuple] = None
    source: Optional[Path] = field(default=None, repr=False)

    def entry_stem(self, index: int) -> str:
        return f"{index:04d}_{self.entries[index].stem}"


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read manifest {path}: {exc}") from exc
    root = Path(data.get("root", "."))
    if not root.is_absolute():
        root = path.parent / root
    size = data.get("input_size")
    input_size = None
    if size is not None:
        input_size = (int(size["h"]), int(size["w"]), int(size.get("c", 3)))
    raw_entries = data.get("entries") or []
    if not raw_entries:
        raise ValueError("manifest has no entries")
    entries = []
    for i, raw in enumerate(raw_entries):
        img = root / raw["image"]
        if not img.is_file():
            raise ValueError(f"entry {i}: image {img} not found")
        with PILImage.open(img) as im:
            w, h = im.size
        bbox = BBox.from_dict(raw["bbox"]) if raw.get("bbox") is not None else None
        if bbox is not None and not (0 <= bbox.x and 0 <= bbox.y and bbox.x + bbox.w <= w and bbox.y + bbox.h <= h):
            raise ValueError(f"entry {i}: bbox {bbox} exceeds the {w}x{h} image")
        gaze = raw.get("gaze_fixations")
        if gaze is not None:
            gaze = [(float(x), float(y)) for x, y in gaze]
            if any(not (0 <= x <= w - 1 and 0 <= y <= h - 1) for x, y in gaze):
                raise ValueError(f"entry {i}: gaze fixation outside the {w}x{h} image")
        target = raw.get("target_class")
        entries.append(ManifestEntry(img, None if target is None else int(target), bbox, gaze, (h, w)))
    return DatasetManifest(entries, root, input_size, path)


def write_manifest(path, entries: list, input_size=None, root: str = ".") -> None:
    data = {"root": root, "entries": entries}
    if input_size is not None:
        h, w, c = input_size
        data["input_size"] = {"h": h, "w": w, "c": c}
    Path(path).write_text(json.dumps(data, indent=2) + "\n")
