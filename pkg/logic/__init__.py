# Logic package
