"""Dataset container, SDTensor files, manifests, batching and the synthetic benchmark."""

from sdgzsl.data.bundle import Batch, DatasetBundle, batch_iterator, check_bundle, load_bundle, make_batch, save_bundle
from sdgzsl.data.sdtensor import decode_sdtensor, encode_sdtensor, read_sdtensor, write_sdtensor
from sdgzsl.data.synthetic import SyntheticSpec, generate_synthetic

__all__ = [
    "Batch", "DatasetBundle", "SyntheticSpec", "batch_iterator", "check_bundle",
    "decode_sdtensor", "encode_sdtensor", "generate_synthetic", "load_bundle",
    "make_batch", "read_sdtensor", "save_bundle", "write_sdtensor",
]
