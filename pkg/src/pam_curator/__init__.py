"""pam-curator: marine-mammal PAM curation via detection + PU active learning."""

__version__ = "0.1.0"
