import sys

from ncae.cli import main

sys.exit(main())
