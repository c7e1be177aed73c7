window.insecureScriptLoaded = true;
