namespace tabbench {}
