"""One-way, offline conversion of published query-answering benchmarks into
the neutral formats the nsmp engine reads: TSV triple files, JSONL query
files, and the NSMPEMB1 binary embedding format.

The engine never sees the upstream archives; this package never imports the
engine. The two meet only at the documented file formats, which keeps either
side replaceable.
"""


class ConversionError(ValueError):
    """Raised when an upstream archive is missing, malformed, or uses a
    structure this converter does not know."""


__all__ = ["ConversionError"]
