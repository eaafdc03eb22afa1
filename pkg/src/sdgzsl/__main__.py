import sys

from sdgzsl.cli import main

sys.exit(main())
