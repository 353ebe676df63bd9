import sys

from conset.cli import main

sys.exit(main())
