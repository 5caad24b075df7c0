import sys

from services.citest.cli import main

sys.exit(main())
