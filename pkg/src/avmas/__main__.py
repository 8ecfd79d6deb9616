import sys

from avmas.cli import main

sys.exit(main())
