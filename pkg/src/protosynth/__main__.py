from protosynth.cli import main

raise SystemExit(main())
