#!/usr/bin/env python3
# -*- coding: utf-8 -*-
from __future__ import annotations

import re


def search(query, rows):
    if not query:
        return []
    hits = [r for r in rows if query in r]
    return hits
