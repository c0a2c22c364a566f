"""Reference-free phishing detection from domain names and DOM structure."""
