import sys

from inscan.cli import main

sys.exit(main())
