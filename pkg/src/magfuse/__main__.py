import sys

from magfuse.cli import main

sys.exit(main())
