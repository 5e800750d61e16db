import sys

from takvar.cli import main

sys.exit(main())
