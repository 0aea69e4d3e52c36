"""Set-wise CTR prediction with a sequential encoder and a set-wise decoder, in numpy."""

from .data import (
    Behavior, FieldSchema, ItemEntry, JaggedBatch, RequestSample, Schema,
    build_panoramic_sequence, collate, decollate, expand_to_pointwise, make_batch,
    mask_side_features, read_dataset, validate_request, write_dataset,
)
from .model import HoMer, ModelConfig, count_flops, count_params
from .params import ParamStore

__version__ = "0.1.0"
