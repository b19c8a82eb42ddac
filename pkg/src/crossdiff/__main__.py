import sys

from crossdiff.cli import main

sys.exit(main())
