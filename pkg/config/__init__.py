# Settings and logger for coordcap
