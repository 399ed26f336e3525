"""Allow ``python -m ttseal`` as an alias for the ``ttseal`` console script."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
