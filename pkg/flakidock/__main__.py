import sys

from flakidock.cli import main

sys.exit(main())
