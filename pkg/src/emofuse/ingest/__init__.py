"""Raw-sample ingestion: frame sampling, audio spectrograms, tokenization,
label targets, manifests, and the synthetic desk-scale corpus."""

from emofuse.ingest.audio import mel_filterbank, segment_audio, spectrogram_image
from emofuse.ingest.manifest import Manifest, SampleRecord, load_manifest, write_manifest
from emofuse.ingest.store import load_preprocessed, preprocess_manifest, preprocess_sample
from emofuse.ingest.synth import RawSample, generate_corpus, synth_raw_sample
from emofuse.ingest.targets import make_targets
from emofuse.ingest.text import ByteTokenizer
from emofuse.ingest.video import sample_frames

__all__ = [
    "ByteTokenizer",
    "Manifest",
    "RawSample",
    "SampleRecord",
    "generate_corpus",
    "load_manifest",
    "load_preprocessed",
    "make_targets",
    "mel_filterbank",
    "preprocess_manifest",
    "preprocess_sample",
    "sample_frames",
    "segment_audio",
    "spectrogram_image",
    "synth_raw_sample",
    "write_manifest",
]
