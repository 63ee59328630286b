import sys

from budgetab.cli import main

sys.exit(main())
