import sys

from semsec.harness import main

# python3 -m semsec [train, eval, sweep-snr, sweep-cr, baseline-svd, selftest, init-config, config, fetch-cifar]
sys.exit(main())
