import sys

from hetfl.cli import main

sys.exit(main())
