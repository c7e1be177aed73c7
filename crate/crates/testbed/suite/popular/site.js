window.siteReady = true;
