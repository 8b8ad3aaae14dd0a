"""\
Copyright (c) 2026, blurba developers
All rights reserved.

"""
