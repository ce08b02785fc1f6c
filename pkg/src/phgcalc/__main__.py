import sys

from .cli_dsl import main

sys.exit(main())
