#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Starter script: ``python main.py <command> ...`` is the same as ``cpt <command> ...``.

Environment:
    CPT_LOG_LEVEL  logging level (default INFO)
    CPT_CONFIG     key=value run config used when --config is absent
"""

from cpt import main

if __name__ == "__main__":
    main()
