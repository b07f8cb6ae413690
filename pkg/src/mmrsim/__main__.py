import sys

from mmrsim.cli import main

sys.exit(main())
