"""Building-centred patch extraction, dataset building and evaluation for xBD-style corpora."""

from .geom import PolygonRing, bounding_box, centroid, parse_wkt_polygon
from .labels import DamageClass, parse_label_file, scan_corpus
from .metrics import ConfusionMatrix, aggregate_runs, report
from .patcher import PatchConfig, extract_patch
from .raster import RgbaRaster, crop, empty_ratio, load_image

__all__ = [
    "ConfusionMatrix", "DamageClass", "PatchConfig", "PolygonRing", "RgbaRaster", "aggregate_runs",
    "bounding_box", "centroid", "crop", "empty_ratio", "extract_patch", "load_image", "parse_label_file",
    "parse_wkt_polygon", "report", "scan_corpus",
]
__version__ = "0.1.0"
