"""Allow ``python -m nsmp_convert``."""

import sys

from .cli import main

sys.exit(main())
