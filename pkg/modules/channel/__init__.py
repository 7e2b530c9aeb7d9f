# Module init
