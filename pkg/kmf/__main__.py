import sys

from kmf.cli import main

sys.exit(main())
