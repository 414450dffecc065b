from byzgd.cli import main

raise SystemExit(main())
