"""Deterministic multi-party simulator.

Five roles (key center, aggregation server SP, compute helper CSP,
requester, participants) exchange length-prefixed wire messages over either
an in-memory deterministic scheduler or localhost sockets. Instrumentation
records every message per round and role and every threshold decryption any
role performs, which is how the communication-count and key-hygiene
properties are checked.
"""

from .codec import WireMessage, decode_message, encode_message  # noqa: F401
from .experiment import (  # noqa: F401
    ExperimentConfig,
    MetricsReport,
    hygiene_violations,
    inject_dropout,
    load_config,
    parse_config_text,
    run_experiment,
)
