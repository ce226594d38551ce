import sys

from minippl.cli import main

sys.exit(main())
