import sys

from geoxfer.harness.cli import main

sys.exit(main())
