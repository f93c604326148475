from radar_odom.cli import main

raise SystemExit(main())
