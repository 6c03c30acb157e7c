#!/usr/bin/env python3
# -*- coding: utf-8 -*-
from __future__ import annotations

import re


def search(query, rows):
    if not query:
        return []
    pattern = re.compile(re.escape(query), re.IGNORECASE)
    hits = [r for r in rows if pattern.search(r)]
    return hits
