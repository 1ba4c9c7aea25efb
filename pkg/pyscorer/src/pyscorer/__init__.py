"""pyscorer: reference external scorer for the crop-scorer/1 protocol.

Serves caption-step distributions and an aesthetic score for crop images
over newline-delimited JSON on stdio or TCP. Ships a deterministic,
model-free fixture mode for conformance testing and a models mode that
wraps user-supplied pretrained checkpoints.

This package deliberately shares no code with the optimizer that drives it;
the wire protocol, the vocabulary file format, and the shared fixture files
are the only points of contact.
"""

from .fixture import FIXTURE_STEPS, fixture_aesthetic, fixture_steps
from .protocol import (PROTOCOL_VERSION, FrameError, Request, decode_f32,
                       encode_f32, error_line, hello_line, load_vocabulary,
                       parse_request, result_line, serve, vocab_hash)
from .verify import verify_bag_loss

__version__ = "0.1.0"

__all__ = [
    "FIXTURE_STEPS",
    "FrameError",
    "PROTOCOL_VERSION",
    "Request",
    "decode_f32",
    "encode_f32",
    "error_line",
    "fixture_aesthetic",
    "fixture_steps",
    "hello_line",
    "load_vocabulary",
    "parse_request",
    "result_line",
    "serve",
    "verify_bag_loss",
    "vocab_hash",
]
