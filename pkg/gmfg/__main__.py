from gmfg.main import main

raise SystemExit(main())
