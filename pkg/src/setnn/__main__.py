"""Allow `python -m setnn` as an alternative to the console script."""

import sys

from setnn.cli import main

sys.exit(main())
