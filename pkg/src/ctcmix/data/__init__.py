"""Synthetic line data, preprocessing, bucketing and file formats."""
from .batching import Batch, LineDataset, bucket_batches, make_buckets
from .generate import DEFAULT_ALPHABET, GenConfig, generate_lines, read_genconfig, write_dataset
from .io import load_split, read_manifest, read_pgm, save_split, write_manifest, write_pgm
from .preprocess import normalize, pad_to_width, preprocess, rescale
from .render import LineImage, RenderStyle, render_line

__all__ = [
    "Batch", "LineDataset", "bucket_batches", "make_buckets", "DEFAULT_ALPHABET", "GenConfig",
    "generate_lines", "read_genconfig", "write_dataset", "load_split", "read_manifest", "read_pgm",
    "save_split", "write_manifest", "write_pgm", "normalize", "pad_to_width", "preprocess", "rescale",
    "LineImage", "RenderStyle", "render_line",
]
