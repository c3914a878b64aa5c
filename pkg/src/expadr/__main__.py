import sys

from expadr.cli import main

sys.exit(main())
