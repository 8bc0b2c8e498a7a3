import sys

from wiseale.cli import main

sys.exit(main())
