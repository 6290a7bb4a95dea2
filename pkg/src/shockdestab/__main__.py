from .cli_reports import main
import sys

sys.exit(main())
