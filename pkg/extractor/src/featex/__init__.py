"""Feature-bundle extraction from frozen vision-language encoders."""

from .backbones import ClipBackbone, HashBackbone, load_backbone
from .bundle import write_bundle
from .errors import BackboneUnavailable, DatasetNotFound, FeatexError
from .extract import ExtractJob, discover_classes, extract, extract_split

__version__ = "0.1.0"
