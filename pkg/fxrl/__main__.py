import sys

from fxrl.cli import main

sys.exit(main())
