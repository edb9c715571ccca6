import sys

from dpate.cli import main

sys.exit(main())
